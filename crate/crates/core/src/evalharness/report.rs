use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{AblationRow, EvalError, EvalReport, GainAnalysis, SampleRecord};

/// Six decimal places, with negative zero printed as zero.
pub fn format_f(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

fn write(dir: &Path, name: &str, body: &str) -> Result<(), EvalError> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))
}

fn report_csv(r: &EvalReport) -> String {
    let mut out = String::from("method,seed,category,n,accuracy,accuracy_plus,mme_score\n");
    let mut row = |seed: &str, c: &super::CategoryScore| {
        let _ = writeln!(
            out,
            "{},{seed},{},{},{},{},{}",
            r.method,
            c.category,
            c.n,
            format_f(c.accuracy),
            format_f(c.accuracy_plus),
            format_f(c.mme_score)
        );
    };
    for s in &r.per_seed {
        for c in &s.categories {
            row(&s.seed.to_string(), c);
        }
    }
    for c in &r.mean {
        row("mean", c);
    }
    for s in &r.per_seed {
        let _ = writeln!(
            out,
            "{},{},total,,,,{}",
            r.method,
            s.seed,
            format_f(s.total)
        );
    }
    let _ = writeln!(out, "{},mean,total,,,,{}", r.method, format_f(r.mean_total));
    out
}

fn report_md(r: &EvalReport) -> String {
    let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
    let mut out = format!(
        "# Evaluation report: {}\n\nSeeds: {}\n\n",
        r.method,
        seeds.join(", ")
    );
    out.push_str("## Per category (mean over seeds)\n\n");
    out.push_str("| category | n | accuracy | accuracy+ | score |\n|---|---|---|---|---|\n");
    for c in &r.mean {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            c.category,
            c.n,
            format_f(c.accuracy),
            format_f(c.accuracy_plus),
            format_f(c.mme_score)
        );
    }
    let _ = writeln!(out, "| total | | | | {} |", format_f(r.mean_total));
    out.push_str("\n## Totals by seed\n\n| seed | total |\n|---|---|\n");
    for s in &r.per_seed {
        let _ = writeln!(out, "| {} | {} |", s.seed, format_f(s.total));
    }
    let _ = writeln!(
        out,
        "| mean ({} seeds) | {} |",
        r.seeds.len(),
        format_f(r.mean_total)
    );
    out
}

fn gain_csv(a: &GainAnalysis) -> String {
    let mut out =
        String::from("category,aug,mean_gain,accuracy_original,accuracy_augmented,score_drop\n");
    for c in &a.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            c.category,
            c.aug,
            format_f(c.mean_gain),
            format_f(c.accuracy_original),
            format_f(c.accuracy_augmented),
            format_f(c.score_drop)
        );
    }
    out
}

fn selection_csv(a: &GainAnalysis) -> String {
    let mut out = String::from("category,aug,count,frequency\n");
    for s in &a.selection {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            s.category,
            s.aug,
            s.count,
            format_f(s.frequency)
        );
    }
    out
}

fn rank_csv(a: &GainAnalysis) -> String {
    let mut out = String::from("metric,category,rank,mean_gain\n");
    for r in &a.ranks {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            a.metric,
            r.category,
            r.rank,
            format_f(r.mean_gain)
        );
    }
    out
}

/// Write `report.csv` and `report.md`, plus `gain_matrix.csv`,
/// `selection_freq.csv` and `distance_rank.csv` when an analysis is given.
pub fn write_report(
    dir: &Path,
    report: &EvalReport,
    analysis: Option<&GainAnalysis>,
) -> Result<(), EvalError> {
    fs::create_dir_all(dir).map_err(|e| EvalError::Io(format!("{}: {e}", dir.display())))?;
    write(dir, "report.csv", &report_csv(report))?;
    write(dir, "report.md", &report_md(report))?;
    if let Some(a) = analysis {
        write(dir, "gain_matrix.csv", &gain_csv(a))?;
        write(dir, "selection_freq.csv", &selection_csv(a))?;
        write(dir, "distance_rank.csv", &rank_csv(a))?;
    }
    Ok(())
}

pub fn write_ablation(dir: &Path, rows: &[AblationRow]) -> Result<(), EvalError> {
    fs::create_dir_all(dir).map_err(|e| EvalError::Io(format!("{}: {e}", dir.display())))?;
    let mut out = String::from("metric,mean_gain_selected,mean_gain_last\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{}",
            r.metric,
            format_f(r.mean_gain_selected),
            format_f(r.mean_gain_last)
        );
    }
    write(dir, "ablation.csv", &out)
}

/// Dump records completed before an abort to `partial_records.jsonl`.
pub fn write_partial(dir: &Path, records: &[SampleRecord]) -> Result<(), EvalError> {
    fs::create_dir_all(dir).map_err(|e| EvalError::Io(format!("{}: {e}", dir.display())))?;
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| EvalError::Io(e.to_string()))?);
        out.push('\n');
    }
    write(dir, "partial_records.jsonl", &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_decimals() {
        assert_eq!(format_f(170.0), "170.000000");
        assert_eq!(format_f(-1e-12), "0.000000");
        assert_eq!(format_f(0.1234567), "0.123457");
    }
}
