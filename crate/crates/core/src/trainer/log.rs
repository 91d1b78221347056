use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const LOG_HEADER: &str =
    "step,reward_E,reward_I,loss_E,loss_I,gnorm_E,gnorm_I,gnorm_total,z_mean,z_min,z_max,clamp_count,lr,discarded,wall_ms";

/// One CSV row per outer step. Losses and norms are means over the step's
/// minibatches; `gnorm_E` is the norm of the unscaled demonstration-loss
/// gradient and `gnorm_total` the pre-clip norm of the combined gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub reward_e: f64,
    pub reward_i: f64,
    pub loss_e: f64,
    pub loss_i: f64,
    pub gnorm_e: f64,
    pub gnorm_i: f64,
    pub gnorm_total: f64,
    pub z_mean: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub clamp_count: usize,
    pub lr: f64,
    pub discarded: usize,
    pub wall_ms: u64,
}

impl LogRow {
    pub fn csv_line(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.reward_e,
            self.reward_i,
            self.loss_e,
            self.loss_i,
            self.gnorm_e,
            self.gnorm_i,
            self.gnorm_total,
            self.z_mean,
            self.z_min,
            self.z_max,
            self.clamp_count,
            self.lr,
            self.discarded,
            self.wall_ms
        )
        .unwrap();
        s
    }

    pub fn parse(line: &str) -> Option<LogRow> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 15 {
            return None;
        }
        let r = |i: usize| f[i].parse::<f64>().ok();
        Some(LogRow {
            step: f[0].parse().ok()?,
            reward_e: r(1)?,
            reward_i: r(2)?,
            loss_e: r(3)?,
            loss_i: r(4)?,
            gnorm_e: r(5)?,
            gnorm_i: r(6)?,
            gnorm_total: r(7)?,
            z_mean: r(8)?,
            z_min: r(9)?,
            z_max: r(10)?,
            clamp_count: f[11].parse().ok()?,
            lr: r(12)?,
            discarded: f[13].parse().ok()?,
            wall_ms: f[14].parse().ok()?,
        })
    }
}

pub fn to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_round_trips() {
        let row = LogRow {
            step: 3,
            reward_e: 0.25,
            reward_i: 0.125,
            loss_e: -0.5,
            loss_i: 1e-7,
            gnorm_e: 0.0,
            gnorm_i: 2.5,
            gnorm_total: 2.5,
            z_mean: 0.1,
            z_min: -3.0,
            z_max: 4.0,
            clamp_count: 2,
            lr: 0.05,
            discarded: 1,
            wall_ms: 0,
        };
        assert_eq!(LogRow::parse(&row.csv_line()), Some(row.clone()));
        let csv = to_csv(&[row]);
        assert_eq!(csv.lines().next().unwrap(), LOG_HEADER);
        assert_eq!(LOG_HEADER.split(',').count(), 15);
    }
}
