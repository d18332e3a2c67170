use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Piecewise-constant learning rate: `(start_epoch, lr)` entries with
/// strictly increasing starts, the first at epoch 0.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule(pub Vec<(usize, f64)>);

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule(vec![(0, 1e-4), (180, 1e-5)])
    }
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule(vec![(0, lr)])
    }

    pub fn validate(&self) -> Result<()> {
        match self.0.first() {
            Some((0, _)) => {}
            _ => return Err(Error::Config("lr schedule must start at epoch 0".into())),
        }
        if self.0.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config("lr schedule epochs must strictly increase".into()));
        }
        if let Some((e, lr)) = self.0.iter().find(|(_, lr)| !(*lr >= 0.0 && lr.is_finite())) {
            return Err(Error::Config(format!("lr {lr} at epoch {e} is not a finite non-negative number")));
        }
        Ok(())
    }

    /// Rate of the last entry starting at or before `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.0
            .iter()
            .take_while(|(start, _)| *start <= epoch)
            .last()
            .map_or(0.0, |(_, lr)| *lr)
    }
}

/// `0:1e-4,180:1e-5`
impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(e, lr)| format!("{e}:{lr:?}")).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let entries = s
            .split(',')
            .map(|part| {
                let (e, lr) = part
                    .trim()
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("schedule entry {part:?} is not epoch:lr")))?;
                let e = e.trim().parse().map_err(|_| Error::Config(format!("bad epoch in {part:?}")))?;
                let lr = lr.trim().parse().map_err(|_| Error::Config(format!("bad lr in {part:?}")))?;
                Ok((e, lr))
            })
            .collect::<Result<Vec<_>>>()?;
        let sched = LrSchedule(entries);
        sched.validate()?;
        Ok(sched)
    }
}
