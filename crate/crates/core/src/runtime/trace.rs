use serde::{Deserialize, Serialize};

use super::stats::CollectiveKind;
use crate::grid::GroupKind;

/// One collective as seen by one rank.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub rank: usize,
    pub step: usize,
    pub kind: CollectiveKind,
    pub group: GroupKind,
    pub group_index: usize,
    /// Root position inside the group for rooted collectives.
    pub root: Option<usize>,
    pub sent_bytes: u64,
    pub recv_bytes: u64,
}

impl TraceRecord {
    pub const HEADER: &'static str = "rank,step,kind,group,group_index,root,sent_bytes,recv_bytes";

    pub fn to_line(&self) -> String {
        let root = self.root.map_or_else(|| "-".to_string(), |r| r.to_string());
        format!(
            "{},{},{},{},{},{},{},{}",
            self.rank,
            self.step,
            self.kind,
            self.group,
            self.group_index,
            root,
            self.sent_bytes,
            self.recv_bytes
        )
    }
}

/// Line-delimited export with a header row; records keep rank-then-step order.
pub fn export_trace(records: &[TraceRecord]) -> String {
    let mut out = String::from(TraceRecord::HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}
