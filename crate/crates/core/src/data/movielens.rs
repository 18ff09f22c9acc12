//! Ratings-log ingestion and the canonical dataset files.
//!
//! Input format: comma-separated with header `userId,movieId,rating,timestamp`
//! (epoch seconds). Ratings are ignored; only (user, item, timestamp) are
//! used. Canonical output: one event per line, tab-separated
//! `user_id<TAB>dense_item_id<TAB>epoch_seconds`, sorted by user id then time,
//! plus a tab-separated id-mapping file `raw_id<TAB>dense_id` sorted by dense
//! id. Both files are byte-deterministic.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rope::EventSequence;

/// Ingested dataset plus the raw-to-dense item id mapping (dense order).
#[derive(Debug, Clone)]
pub struct IngestResult {
    pub dataset: Dataset,
    /// `mapping[dense_id] = raw_id`.
    pub id_mapping: Vec<u64>,
}

/// Read a ratings log, group events by user, sort each user's events by
/// timestamp (stable, so ties keep file order), and re-index item ids densely
/// by first appearance.
pub fn ingest_ratings(path: &Path) -> Result<IngestResult> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Input(format!("cannot open ratings file: {e}")))?;
    {
        let headers = reader.headers().map_err(|e| Error::Input(format!("bad header: {e}")))?;
        let expect = ["userId", "movieId", "rating", "timestamp"];
        let got: Vec<&str> = headers.iter().collect();
        if got != expect {
            return Err(Error::Input(format!(
                "expected header {expect:?}, found {got:?}"
            )));
        }
    }

    let mut dense_ids: HashMap<u64, usize> = HashMap::new();
    let mut id_mapping: Vec<u64> = Vec::new();
    let mut per_user: HashMap<u64, Vec<(i64, usize)>> = HashMap::new();
    let mut user_order: Vec<u64> = Vec::new();
    let mut rows = 0usize;

    for record in reader.records() {
        let record = record.map_err(|e| Error::Input(format!("malformed row: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(Error::Input(format!("line {line}: expected 4 fields, found {}", record.len())));
        }
        let user: u64 = record[0]
            .parse()
            .map_err(|_| Error::Input(format!("line {line}: bad user id {:?}", &record[0])))?;
        let raw_item: u64 = record[1]
            .parse()
            .map_err(|_| Error::Input(format!("line {line}: bad movie id {:?}", &record[1])))?;
        // Field 2 is the rating; implicit-feedback convention ignores it.
        let ts: i64 = record[3]
            .parse()
            .map_err(|_| Error::Input(format!("line {line}: bad timestamp {:?}", &record[3])))?;

        let dense = *dense_ids.entry(raw_item).or_insert_with(|| {
            id_mapping.push(raw_item);
            id_mapping.len() - 1
        });
        per_user.entry(user).or_insert_with(|| {
            user_order.push(user);
            Vec::new()
        });
        per_user.get_mut(&user).unwrap().push((ts, dense));
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Input("ratings file contains no data rows".into()));
    }

    let vocab_size = id_mapping.len();
    user_order.sort_unstable();
    let mut user_ids = Vec::with_capacity(user_order.len());
    let mut sequences = Vec::with_capacity(user_order.len());
    for user in user_order {
        let mut events = per_user.remove(&user).unwrap();
        events.sort_by_key(|&(ts, _)| ts); // stable: ties keep file order
        let (stamps, items): (Vec<i64>, Vec<usize>) = events.into_iter().unzip();
        user_ids.push(user);
        sequences.push(EventSequence::new(items, stamps, vocab_size)?);
    }

    Ok(IngestResult { dataset: Dataset { user_ids, sequences, vocab_size }, id_mapping })
}

/// Write the canonical event file (see module docs).
pub fn write_canonical(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut order: Vec<usize> = (0..dataset.user_ids.len()).collect();
    order.sort_by_key(|&i| dataset.user_ids[i]);
    let mut w = BufWriter::new(File::create(path)?);
    for i in order {
        let user = dataset.user_ids[i];
        let seq = &dataset.sequences[i];
        for (item, ts) in seq.item_ids().iter().zip(seq.raw_timestamps()) {
            writeln!(w, "{user}\t{item}\t{ts}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a canonical event file back into a dataset. The vocabulary size is
/// the largest item id plus one.
pub fn read_canonical(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut per_user: Vec<(u64, Vec<usize>, Vec<i64>)> = Vec::new();
    let mut max_item = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let parse_err = |what: &str| {
            Error::Input(format!("line {}: bad {what} in canonical file", lineno + 1))
        };
        let user: u64 = parts.next().ok_or_else(|| parse_err("user"))?.parse().map_err(|_| parse_err("user"))?;
        let item: usize = parts.next().ok_or_else(|| parse_err("item"))?.parse().map_err(|_| parse_err("item"))?;
        let ts: i64 = parts.next().ok_or_else(|| parse_err("timestamp"))?.parse().map_err(|_| parse_err("timestamp"))?;
        max_item = max_item.max(item);
        match per_user.last_mut() {
            Some((u, items, stamps)) if *u == user => {
                items.push(item);
                stamps.push(ts);
            }
            _ => per_user.push((user, vec![item], vec![ts])),
        }
    }
    if per_user.is_empty() {
        return Err(Error::Input("canonical file contains no events".into()));
    }
    let vocab_size = max_item + 1;
    let mut user_ids = Vec::with_capacity(per_user.len());
    let mut sequences = Vec::with_capacity(per_user.len());
    for (user, items, stamps) in per_user {
        user_ids.push(user);
        sequences.push(EventSequence::new(items, stamps, vocab_size)?);
    }
    Ok(Dataset { user_ids, sequences, vocab_size })
}

/// Write the raw-to-dense id mapping, sorted by dense id.
pub fn write_id_mapping(id_mapping: &[u64], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (dense, raw) in id_mapping.iter().enumerate() {
        writeln!(w, "{raw}\t{dense}")?;
    }
    w.flush()?;
    Ok(())
}
