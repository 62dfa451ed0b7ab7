//! Per-step training metrics and their CSV rendering. Two runs with the same
//! config and dataset must produce byte-identical CSV output.

use std::io::{self, Write};

use crate::textfmt::format_g6;

/// Everything observed during one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub recon_loss: f64,
    pub teacher_loss: f64,
    pub gen_loss: f64,
    pub avd_loss: f64,
    pub real_score: f64,
    pub fake_score: f64,
}

/// Step records in strictly increasing `(epoch, step)` order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    records: Vec<StepRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str =
        "epoch,step,recon_loss,teacher_loss,gen_loss,avd_loss,real_score,fake_score";

    pub fn new() -> Self {
        TrainLog::default()
    }

    pub fn push(&mut self, record: StepRecord) {
        if let Some(last) = self.records.last() {
            assert!(
                (record.epoch, record.step) > (last.epoch, last.step),
                "records must arrive in increasing (epoch, step) order"
            );
        }
        self.records.push(record);
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.epoch,
                r.step,
                format_g6(r.recon_loss),
                format_g6(r.teacher_loss),
                format_g6(r.gen_loss),
                format_g6(r.avd_loss),
                format_g6(r.real_score),
                format_g6(r.fake_score),
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(epoch: usize, step: usize) -> StepRecord {
        StepRecord {
            epoch,
            step,
            recon_loss: 0.25,
            teacher_loss: 2.0 * std::f64::consts::LN_2,
            gen_loss: 1e-7,
            avd_loss: 123456.7,
            real_score: 0.9,
            fake_score: 0.1,
        }
    }

    #[test]
    fn csv_output_is_exact() {
        let mut log = TrainLog::new();
        log.push(record(0, 0));
        log.push(record(0, 1));
        let want = "epoch,step,recon_loss,teacher_loss,gen_loss,avd_loss,real_score,fake_score\n\
                    0,0,0.25,1.38629,1e-07,123457,0.9,0.1\n\
                    0,1,0.25,1.38629,1e-07,123457,0.9,0.1\n";
        assert_eq!(log.to_csv(), want);
    }

    #[test]
    #[should_panic(expected = "increasing (epoch, step)")]
    fn out_of_order_records_panic() {
        let mut log = TrainLog::new();
        log.push(record(1, 0));
        log.push(record(0, 5));
    }
}
