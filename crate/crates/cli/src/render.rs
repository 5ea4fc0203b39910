//! Plain-text tables for terminal output.

use std::fmt::Write;

use fcstress_core::pipeline::{SettingReport, Summary, TableRow};

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

pub fn settings(rows: &[SettingReport], passive_pct: f64) -> String {
    let mut s = String::new();
    let strategies: Vec<&str> = rows
        .first()
        .map(|r| r.strategies.iter().map(|o| o.strategy.as_str()).collect())
        .unwrap_or_default();
    let _ = write!(
        s,
        "{:<24} {:>10} {:>10} {:>10} {:>7} {:>7}",
        "setting", "rmse", "mape", "crps", "P%", "T%"
    );
    for name in &strategies {
        let _ = write!(s, " {:>18}", format!("{name} ret%/trd%"));
    }
    s.push('\n');
    for r in rows {
        let m = &r.metrics;
        let _ = write!(
            s,
            "{:<24} {:>10.6} {:>10} {:>10.6} {:>7.2} {:>7.2}",
            r.setting,
            m.rmse,
            opt(m.mape.value, 4),
            m.crps,
            m.accuracy,
            m.baseline
        );
        for o in &r.strategies {
            let _ = write!(
                s,
                " {:>18}",
                format!("{:.2}/{:.1}", o.compounded_return_pct, o.pct_traded)
            );
        }
        s.push('\n');
    }
    let _ = writeln!(s, "passive return over test split: {passive_pct:.2}%");
    s
}

fn table_row(s: &mut String, r: &TableRow) {
    let label = match (r.param, r.direction) {
        (Some(p), Some(d)) => format!("{p} {d}"),
        _ => "regular".to_string(),
    };
    let _ = write!(
        s,
        "{:<12} {:>8} {:>10.6} {:>10} {:>10.6} {:>7.2} {:>7.2}",
        label,
        opt(r.epsilon, 3),
        r.rmse,
        opt(r.mape, 4),
        r.crps,
        r.accuracy,
        r.baseline
    );
    for ret in &r.returns {
        let _ = write!(s, " {:>12.2}", ret.compounded_return_pct);
    }
    s.push('\n');
}

pub fn summary(sm: &Summary) -> String {
    let mut s = String::new();
    let d = &sm.dataset;
    let _ = writeln!(
        s,
        "dataset: {} {:?} steps, {} features; split train {:?} valid {:?} test {:?}",
        d.length,
        d.frequency,
        d.feature_names.len(),
        d.split.train,
        d.split.valid,
        d.split.test
    );
    let _ = writeln!(
        s,
        "training: {} epochs, best epoch {}, valid NLL {:.6} (initial {:.6})",
        sm.training.epochs.len(),
        sm.training.best_epoch,
        sm.training.best_valid_nll,
        sm.training.initial_valid_nll
    );
    let _ = write!(
        s,
        "\n{:<12} {:>8} {:>10} {:>10} {:>10} {:>7} {:>7}",
        "row", "eps", "rmse", "mape", "crps", "P%", "T%"
    );
    if let Some(first) = sm.table.first() {
        for ret in &first.returns {
            let _ = write!(s, " {:>12}", ret.strategy);
        }
    }
    s.push('\n');
    for r in &sm.table {
        table_row(&mut s, r);
    }
    let _ = writeln!(
        s,
        "\npassive return over test split: {:.2}%",
        sm.passive_return_pct
    );
    s
}
