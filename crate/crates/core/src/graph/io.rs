//! Plain TSV link and feature files.
//!
//! Links: `user<TAB>item` per line. Features: `item<TAB>tok tok ...` per line,
//! tokens being non-negative integer ids. Blank lines are ignored.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{FeatureBag, InteractionGraph, ItemFeatures};
use crate::error::{Error, Result};

fn parse_id(path: &Path, line: usize, field: &str, what: &str) -> Result<u32> {
    field.trim().parse::<u32>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("invalid {what} id {field:?}"),
    })
}

/// Reads a link file. Dimensions default to `max id + 1` when not given.
pub fn ingest_links(
    path: impl AsRef<Path>,
    num_users: Option<usize>,
    num_items: Option<usize>,
) -> Result<InteractionGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut links = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(u), Some(v), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected `user<TAB>item`".into(),
            });
        };
        links.push((parse_id(path, i + 1, u, "user")?, parse_id(path, i + 1, v, "item")?));
    }
    let max_u = links.iter().map(|&(u, _)| u as usize + 1).max().unwrap_or(0);
    let max_v = links.iter().map(|&(_, v)| v as usize + 1).max().unwrap_or(0);
    InteractionGraph::from_links(num_users.unwrap_or(max_u), num_items.unwrap_or(max_v), links)
}

/// Reads a feature file into one bag per item. Items absent from the file get
/// an empty bag. The vocabulary defaults to `max token + 1`.
pub fn ingest_features(
    path: impl AsRef<Path>,
    num_items: usize,
    vocab: Option<usize>,
) -> Result<ItemFeatures> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut bags = vec![FeatureBag::default(); num_items];
    let mut max_tok = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        let (item, rest) = line.split_once('\t').unwrap_or((line, ""));
        let item = parse_id(path, i + 1, item, "item")? as usize;
        if item >= num_items {
            return Err(Error::Bounds {
                what: "item",
                id: item,
                dim: num_items,
            });
        }
        let toks = rest
            .split_whitespace()
            .map(|t| parse_id(path, i + 1, t, "token"))
            .collect::<Result<Vec<_>>>()?;
        max_tok = max_tok.max(toks.iter().map(|&t| t as usize + 1).max().unwrap_or(0));
        bags[item] = FeatureBag::from_tokens(toks);
    }
    Ok(ItemFeatures {
        vocab: vocab.unwrap_or(max_tok),
        bags,
    })
}

pub fn write_links(graph: &InteractionGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (u, v) in graph.links() {
        writeln!(w, "{u}\t{v}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_features(features: &ItemFeatures, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (v, bag) in features.bags.iter().enumerate() {
        let toks: Vec<String> = bag
            .tokens
            .iter()
            .zip(&bag.counts)
            .flat_map(|(t, &c)| std::iter::repeat_n(t.to_string(), c as usize))
            .collect();
        writeln!(w, "{v}\t{}", toks.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
