use std::fmt;
use std::io::Write;

use serde::{Serialize, Serializer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    HandoverDelay,
    Pdd,
    Throughput,
    Plp,
    ProcDelay,
    TaskExec,
    CtrlBytes,
    FrameLoss,
    BwUtil,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::HandoverDelay => "HANDOVER_DELAY",
            Metric::Pdd => "PDD",
            Metric::Throughput => "THROUGHPUT",
            Metric::Plp => "PLP",
            Metric::ProcDelay => "PROC_DELAY",
            Metric::TaskExec => "TASK_EXEC",
            Metric::CtrlBytes => "CTRL_BYTES",
            Metric::FrameLoss => "FRAME_LOSS",
            Metric::BwUtil => "BW_UTIL",
        }
    }

    /// Every metric has one fixed unit.
    pub fn unit(self) -> &'static str {
        match self {
            Metric::HandoverDelay | Metric::Pdd | Metric::ProcDelay | Metric::TaskExec => "ms",
            Metric::Throughput | Metric::BwUtil => "Mbps",
            Metric::Plp | Metric::FrameLoss => "probability",
            Metric::CtrlBytes => "bytes",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub time_ms: f64,
    pub metric: Metric,
    pub value: f64,
    pub module: String,
    pub protocol: String,
    pub scenario: String,
}

impl MetricsRecord {
    pub fn new(time_ms: f64, metric: Metric, value: f64) -> Self {
        Self { time_ms, metric, value, module: String::new(), protocol: String::new(), scenario: String::new() }
    }

    pub fn labels(mut self, module: &str, protocol: &str, scenario: &str) -> Self {
        self.module = module.into();
        self.protocol = protocol.into();
        self.scenario = scenario.into();
        self
    }
}

#[derive(Serialize)]
struct Row<'a> {
    time_ms: String,
    metric: Metric,
    value: String,
    unit: &'static str,
    module: &'a str,
    protocol: &'a str,
    scenario: &'a str,
}

/// `time_ms,metric,value,unit,module,protocol,scenario`
pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(Row {
            time_ms: format!("{:.3}", r.time_ms),
            metric: r.metric,
            value: format!("{:.6}", r.value),
            unit: r.metric.unit(),
            module: &r.module,
            protocol: &r.protocol,
            scenario: &r.scenario,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Mean with a normal-approximation 95% interval, mean ± 1.96·σ/√n.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Ci {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl Ci {
    pub fn of(samples: &[f64]) -> Ci {
        let n = samples.len();
        if n == 0 {
            return Ci { mean: f64::NAN, half_width: f64::NAN, n };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Ci { mean, half_width: 0.0, n };
        }
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ci { mean, half_width: 1.96 * var.sqrt() / (n as f64).sqrt(), n }
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }

    /// Entirely above `other` (a significant difference at this level).
    pub fn above(&self, other: &Ci) -> bool {
        self.lower() > other.upper()
    }
}

impl fmt::Display for Ci {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4} (n={})", self.mean, self.half_width, self.n)
    }
}

/// Sums `(time, amount)` pairs into fixed-width bins over `[0, horizon)`.
pub fn bin_sums(events: impl IntoIterator<Item = (u64, f64)>, width: u64, horizon: u64) -> Vec<f64> {
    let n = horizon.div_ceil(width) as usize;
    let mut bins = vec![0.0; n];
    for (t, v) in events {
        if let Some(b) = bins.get_mut((t / width) as usize) {
            *b += v;
        }
    }
    bins
}
