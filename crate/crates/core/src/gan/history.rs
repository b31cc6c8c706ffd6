use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "step,d_loss,g_loss,d_real_mean,d_fake_mean";

/// Losses and mean discriminator scores for one completed training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// Number of updates completed, starting at 1.
    pub step: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
    /// Steps at which a sample grid was written.
    pub snapshots: Vec<u64>,
}

/// Formats with six significant digits, `%g`-style.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim(mantissa))
    }
}

impl TrainHistory {
    pub fn push(&mut self, record: StepRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(Error::InvalidArgument(format!(
                    "history step {} does not follow {}",
                    record.step, last.step
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn d_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.d_loss).collect()
    }

    pub fn g_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.g_loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let fields = [r.d_loss, r.g_loss, r.d_real_mean, r.d_fake_mean].map(format_sig6);
            out.push_str(&format!("{},{}\n", r.step, fields.join(",")));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Format("history CSV header mismatch".into()));
        }
        let mut history = Self::default();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = || Error::Format(format!("history CSV row {}: `{line}`", i + 1));
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(bad());
            }
            let num = |j: usize| cols[j].parse::<f64>().map_err(|_| bad());
            history.push(StepRecord {
                step: cols[0].parse().map_err(|_| bad())?,
                d_loss: num(1)?,
                g_loss: num(2)?,
                d_real_mean: num(3)?,
                d_fake_mean: num(4)?,
            })?;
        }
        Ok(history)
    }

    /// Drops every record after `step`.
    pub fn truncate_to(&mut self, step: u64) {
        self.records.retain(|r| r.step <= step);
        self.snapshots.retain(|&s| s <= step);
    }
}

/// Means of the first and last `window` values, or `None` if there are fewer than `window`.
pub fn window_means(values: &[f64], window: usize) -> Option<(f64, f64)> {
    if window == 0 || values.len() < window {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&values[..window]), mean(&values[values.len() - window..])))
}
