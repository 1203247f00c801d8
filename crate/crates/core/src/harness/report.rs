use std::fmt::Write as _;

use super::sweep::{format_value, ModelTag, SweepCell};
use crate::attacks::AttackKind;
use crate::metrics::Metric;
use crate::{Error, Result};

/// The ε values of the published tables.
pub const TABLE_EPS: [u32; 3] = [13, 64, 128];

/// Markdown tables of average metrics: one block per model and ε, seven
/// metric rows by three attack columns. Values are copied from `cells`.
pub fn report_tables(cells: &[SweepCell], eps: &[u32]) -> Result<String> {
    let mut available: Vec<u32> = cells.iter().map(|c| c.eps_raw).collect();
    available.sort_unstable();
    available.dedup();
    if let Some(missing) = eps.iter().find(|e| !available.contains(e)) {
        return Err(Error::InvalidInput(format!("ε = {missing} not in sweep; available: {available:?}")));
    }
    let lookup = |model, attack, e, metric: &str| {
        cells
            .iter()
            .find(|c| c.model == model && c.attack == attack && c.eps_raw == e && c.metric == metric && c.class == "Average")
            .map(|c| format_value(c.value))
            .unwrap_or_else(|| "n/a".into())
    };
    let mut out = String::new();
    for model in ModelTag::ALL {
        let _ = writeln!(out, "## {}\n", model.title());
        for &e in eps {
            let _ = writeln!(out, "### ε = {e}\n");
            let _ = writeln!(out, "| Metric | FGSM | BIM | PGD |");
            let _ = writeln!(out, "|---|---:|---:|---:|");
            for m in Metric::ALL {
                let vals: Vec<String> = AttackKind::ALL.iter().map(|&a| lookup(model, a, e, m.name())).collect();
                let _ = writeln!(out, "| {} | {} |", m.name(), vals.join(" | "));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Number of `### ε` blocks in a rendered report.
pub fn block_count(tables: &str) -> usize {
    tables.lines().filter(|l| l.starts_with("### ")).count()
}
