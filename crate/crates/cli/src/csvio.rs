//! Deterministic CSV emission: fixed column order, six decimal places for
//! values, UTF-8 with LF line endings, and the 100 dB cap for the infinite
//! PSNR sentinel.

use semcomm_core::metrics::PSNR_CAP_DB;
use semcomm_core::overhead::OverheadReport;
use semcomm_core::train::{MetricRow, StepLog};

fn fmt_value(v: f64) -> String {
    let capped = if v == f64::INFINITY { PSNR_CAP_DB } else { v };
    format!("{capped:.6}")
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("task,channel,snr_db,metric_name,value,seed\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.task,
            r.channel,
            r.snr_db,
            r.metric_name,
            fmt_value(r.value),
            r.seed
        ));
    }
    out
}

pub fn train_log_csv(logs: &[StepLog]) -> String {
    let mut out = String::from("step,task,snr_db,loss\n");
    for l in logs {
        out.push_str(&format!("{},{},{},{}\n", l.step, l.task, fmt_value(l.snr_db), fmt_value(l.loss)));
    }
    out
}

pub fn overhead_csv(reports: &[OverheadReport]) -> String {
    let mut out = String::from(
        "task,fused_rows,unfused_rows,width,symbol_bits,fused_bytes,unfused_bytes,ratio\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.task,
            r.fused_rows,
            r.unfused_rows,
            r.width,
            r.symbol_bits,
            r.fused_bytes,
            r.unfused_bytes,
            fmt_value(r.ratio_value())
        ));
    }
    out
}
