//! Markdown and CSV tables.

use std::fmt::Write;

use super::{MetricReport, ModelFlops, SweepRow};
use crate::numerics::counter::FlopKind;

pub fn metrics_markdown(rows: &[(String, MetricReport)]) -> String {
    let mut out = String::from("| Method | PSNR r/r | PSNR r/s | SSIM r/r | SSIM r/s |\n|---|---|---|---|---|\n");
    for (name, m) in rows {
        let _ = writeln!(
            out,
            "| {name} | {:.2} | {:.2} | {:.4} | {:.4} |",
            m.psnr_rr, m.psnr_rs, m.ssim_rr, m.ssim_rs
        );
    }
    out
}

pub fn metrics_csv(rows: &[(String, MetricReport)]) -> String {
    let mut out = String::from("method,psnr_rr,psnr_rs,ssim_rr,ssim_rs\n");
    for (name, m) in rows {
        let _ = writeln!(out, "{name},{},{},{},{}", m.psnr_rr, m.psnr_rs, m.ssim_rr, m.ssim_rs);
    }
    out
}

pub fn model_flops_markdown(report: &ModelFlops) -> String {
    let mut out = String::from("| Module |");
    for k in FlopKind::ALL {
        let _ = write!(out, " {} |", k.name());
    }
    out.push_str(" total |\n|---|");
    out.push_str(&"---|".repeat(FlopKind::ALL.len() + 1));
    out.push('\n');
    for m in &report.modules {
        let _ = write!(out, "| {} |", m.module);
        for k in FlopKind::ALL {
            let _ = write!(out, " {} |", m.counts.get(k));
        }
        let _ = writeln!(out, " {} |", m.counts.total());
    }
    let all = report.counts();
    out.push_str("| **total** |");
    for k in FlopKind::ALL {
        let _ = write!(out, " {} |", all.get(k));
    }
    let _ = writeln!(out, " {} |", all.total());
    let _ = writeln!(
        out,
        "\nInput {}x{}: {:.4} GFLOPs (multiply-adds).",
        report.height,
        report.width,
        report.gflops()
    );
    out
}

pub fn model_flops_csv(report: &ModelFlops) -> String {
    let mut out = String::from("module");
    for k in FlopKind::ALL {
        let _ = write!(out, ",{}", k.name());
    }
    out.push_str(",total\n");
    let mut row = |name: &str, c: crate::numerics::counter::FlopCounts| {
        out.push_str(name);
        for k in FlopKind::ALL {
            let _ = write!(out, ",{}", c.get(k));
        }
        let _ = writeln!(out, ",{}", c.total());
    };
    for m in &report.modules {
        row(&m.module, m.counts);
    }
    row("total", report.counts());
    out
}

pub fn attention_sweep_markdown(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "| M | Lm-Win closed form | Le-Win closed form | ratio | 4/(1+4/M⁴) | per-window ratio |\n|---|---|---|---|---|---|\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {:.0} | {:.0} | {:.6} | {:.6} | {:.6} |",
            r.window, r.lmwin.closed_form_total, r.lewin.closed_form_total, r.ratio, r.expected_ratio, r.windowed_ratio
        );
    }
    out
}
