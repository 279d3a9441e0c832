//! Line-oriented DAG file format.
//!
//! ```text
//! id,height,miner,create_time,parents,size_mb,tx_count
//! 9f2c0d51a3e4b7c8,0,-,0,,0,0
//! 1b7e5c0a99d2f310,1,4,12.5,9f2c0d51a3e4b7c8,4,16000
//! ```
//!
//! Ids are 16-digit lowercase hex, parents are `;`-separated, genesis has an
//! empty parent list and miner `-`. Records are written parent-first (height,
//! then digest), so a file can be loaded in one pass. Readers also accept the
//! five-column form without `size_mb,tx_count`.

use std::fs;
use std::path::Path;

use super::{Block, BlockDag, BlockId, DagError};

pub const DAG_HEADER: &str = "id,height,miner,create_time,parents,size_mb,tx_count";

pub fn serialize_dag(dag: &BlockDag) -> String {
    let mut out = String::with_capacity(64 * (dag.len() + 1));
    out.push_str(DAG_HEADER);
    out.push('\n');
    for b in dag.topological() {
        let parents: Vec<String> = b.parents.iter().map(|p| p.to_string()).collect();
        let miner = b.miner.map_or_else(|| "-".to_string(), |m| m.to_string());
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            b.id,
            b.height,
            miner,
            b.create_time,
            parents.join(";"),
            b.size_mb,
            b.tx_count
        ));
    }
    out
}

pub fn parse_dag(text: &str) -> Result<BlockDag, DagError> {
    let mut dag = BlockDag::new();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim().starts_with("id,") => {}
        _ => {
            return Err(DagError::Malformed {
                line: 1,
                reason: "missing header".into(),
            })
        }
    }
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| DagError::Malformed {
            line: line_no,
            reason,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 && fields.len() != 7 {
            return Err(malformed(format!(
                "expected 5 or 7 fields, got {}",
                fields.len()
            )));
        }
        let id: BlockId = fields[0].parse().map_err(malformed)?;
        let height: u32 = fields[1]
            .parse()
            .map_err(|e| malformed(format!("height: {e}")))?;
        let miner = match fields[2] {
            "-" => None,
            m => Some(m.parse().map_err(|e| malformed(format!("miner: {e}")))?),
        };
        let create_time: f64 = fields[3]
            .parse()
            .map_err(|e| malformed(format!("create_time: {e}")))?;
        let parents = if fields[4].is_empty() {
            Vec::new()
        } else {
            fields[4]
                .split(';')
                .map(|p| p.trim().parse::<BlockId>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(malformed)?
        };
        let (size_mb, tx_count) = if fields.len() == 7 {
            (
                fields[5]
                    .parse()
                    .map_err(|e| malformed(format!("size_mb: {e}")))?,
                fields[6]
                    .parse()
                    .map_err(|e| malformed(format!("tx_count: {e}")))?,
            )
        } else {
            (0.0, 0)
        };
        let mut sorted = parents.clone();
        sorted.sort_unstable();
        let block = Block {
            id,
            parents: sorted,
            miner,
            create_time,
            height,
            size_mb,
            tx_count,
        };
        let stored = dag.add_block(block)?;
        if stored.height != height {
            return Err(malformed(format!(
                "height {height} does not match computed height {}",
                stored.height
            )));
        }
    }
    Ok(dag)
}

pub fn read_dag_file(path: &Path) -> Result<BlockDag, DagError> {
    let text =
        fs::read_to_string(path).map_err(|e| DagError::Io(format!("{}: {e}", path.display())))?;
    parse_dag(&text)
}

pub fn write_dag_file(dag: &BlockDag, path: &Path) -> Result<(), DagError> {
    fs::write(path, serialize_dag(dag))
        .map_err(|e| DagError::Io(format!("{}: {e}", path.display())))
}
