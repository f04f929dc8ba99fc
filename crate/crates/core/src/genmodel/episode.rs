use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::env::Action;
use crate::error::{Error, Result};

/// Time-ordered observations and the actions between them.
///
/// `actions[t]` is taken after `observations[t]` and leads to
/// `observations[t + 1]`, so there is always one fewer action than
/// observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    observations: Vec<f64>,
    actions: Vec<Action>,
}

impl Episode {
    pub fn new(observations: Vec<f64>, actions: Vec<Action>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Contract("episode needs at least one observation".into()));
        }
        if actions.len() + 1 != observations.len() {
            return Err(Error::Contract(format!(
                "episode with {} observations needs {} actions, got {}",
                observations.len(),
                observations.len() - 1,
                actions.len()
            )));
        }
        Ok(Episode {
            observations,
            actions,
        })
    }

    /// Episode holding only the first observation.
    pub fn start(first_observation: f64) -> Self {
        Episode {
            observations: vec![first_observation],
            actions: Vec::new(),
        }
    }

    pub fn push(&mut self, action: Action, observation: f64) {
        self.actions.push(action);
        self.observations.push(observation);
    }

    /// Number of observations.
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Number of transitions (actions taken).
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    /// Action that led into observation `t`; `None` for the first one.
    pub fn action_before(&self, t: usize) -> Option<Action> {
        t.checked_sub(1).map(|i| self.actions[i])
    }

    /// Writes the `t,obs,action` CSV form. The final row has an empty action.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let fail = |e: csv::Error| Error::Format {
            path: "<episode csv>".into(),
            message: e.to_string(),
        };
        wr.write_record(["t", "obs", "action"]).map_err(fail)?;
        for (t, o) in self.observations.iter().enumerate() {
            let a = self.actions.get(t).map(|a| a.symbol().to_string()).unwrap_or_default();
            wr.write_record([t.to_string(), o.to_string(), a]).map_err(fail)?;
        }
        wr.flush().map_err(|e| Error::io("<episode csv>", e))?;
        Ok(())
    }

    /// Reads the CSV form written by [`Episode::write_csv`]. Lines starting
    /// with `#` are skipped.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let bad = |message: String| Error::Format {
            path: "<episode csv>".into(),
            message,
        };
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let headers = rd.headers().map_err(|e| bad(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["t", "obs", "action"] {
            return Err(bad(format!("unexpected header {headers:?}")));
        }
        let mut observations = Vec::new();
        let mut actions = Vec::new();
        for (row, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let t: usize = rec[0].parse().map_err(|_| bad(format!("row {row}: bad t")))?;
            if t != row {
                return Err(bad(format!("row {row}: t = {t} out of order")));
            }
            let o: f64 = rec[1].parse().map_err(|_| bad(format!("row {row}: bad obs")))?;
            observations.push(o);
            let a = &rec[2];
            if !a.is_empty() {
                let c = a.chars().next().filter(|_| a.len() == 1);
                let act = c
                    .and_then(Action::from_symbol)
                    .ok_or_else(|| bad(format!("row {row}: action must be L or R, got {a:?}")))?;
                actions.push(act);
            }
        }
        Episode::new(observations, actions).map_err(|e| bad(e.to_string()))
    }
}
