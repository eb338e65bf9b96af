use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

/// Uniformly sampled record of a run.
///
/// Per-inverter series are indexed `[inverter][sample]`; circulating currents follow the pair
/// order of [`inverter_pairs`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulationTrace {
    pub inverter_count: usize,
    pub sample_interval: f64,
    pub nominal_frequency: f64,
    pub nominal_voltage: f64,
    pub rated_apparent_power: Vec<f64>,
    /// Snapped event times with a short description.
    pub events: Vec<(f64, String)>,
    pub time: Vec<f64>,
    pub pcc_voltage: Vec<f64>,
    pub capacitor_voltage: Vec<Vec<f64>>,
    pub branch_current: Vec<Vec<f64>>,
    pub inductor_current: Vec<Vec<f64>>,
    /// Commanded magnitude E_k.
    pub magnitude: Vec<Vec<f64>>,
    /// One-cycle demodulated P_k and Q_k.
    pub active_power: Vec<Vec<f64>>,
    pub reactive_power: Vec<Vec<f64>>,
    /// (i_j - i_k)/2.
    pub circulating_current: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// `(j, k)` with `j < k`, in row-major order.
pub fn inverter_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|j| (j + 1..n).map(move |k| (j, k))).collect()
}

impl SimulationTrace {
    pub(crate) fn with_capacity(n: usize, samples: usize) -> Self {
        let per = || (0..n).map(|_| Vec::with_capacity(samples)).collect::<Vec<_>>();
        SimulationTrace {
            inverter_count: n,
            time: Vec::with_capacity(samples),
            pcc_voltage: Vec::with_capacity(samples),
            capacitor_voltage: per(),
            branch_current: per(),
            inductor_current: per(),
            magnitude: per(),
            active_power: per(),
            reactive_power: per(),
            circulating_current: (0..n * n.saturating_sub(1) / 2).map(|_| Vec::with_capacity(samples)).collect(),
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// `t, v_pcc`, then `v, i, iL, E, P, Q` per inverter, then `icirc_jk`; indices are 1-based.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = alloc::vec![String::from("t"), String::from("v_pcc")];
        for k in 1..=self.inverter_count {
            for q in ["v", "i", "iL", "E", "P", "Q"] {
                names.push(format!("{q}{k}"));
            }
        }
        for (j, k) in inverter_pairs(self.inverter_count) {
            names.push(format!("icirc_{}{}", j + 1, k + 1));
        }
        names
    }

    pub fn row(&self, s: usize) -> Vec<f64> {
        let mut r = alloc::vec![self.time[s], self.pcc_voltage[s]];
        for k in 0..self.inverter_count {
            r.extend_from_slice(&[
                self.capacitor_voltage[k][s],
                self.branch_current[k][s],
                self.inductor_current[k][s],
                self.magnitude[k][s],
                self.active_power[k][s],
                self.reactive_power[k][s],
            ]);
        }
        r.extend(self.circulating_current.iter().map(|c| c[s]));
        r
    }

    /// Rebuilds a trace from rows laid out as in [`column_names`](Self::column_names).
    pub fn from_rows(inverter_count: usize, rows: &[Vec<f64>]) -> Option<Self> {
        let n = inverter_count;
        let width = 2 + 6 * n + n * n.saturating_sub(1) / 2;
        let mut t = SimulationTrace::with_capacity(n, rows.len());
        for r in rows {
            if r.len() != width {
                return None;
            }
            t.time.push(r[0]);
            t.pcc_voltage.push(r[1]);
            for k in 0..n {
                let b = 2 + 6 * k;
                t.capacitor_voltage[k].push(r[b]);
                t.branch_current[k].push(r[b + 1]);
                t.inductor_current[k].push(r[b + 2]);
                t.magnitude[k].push(r[b + 3]);
                t.active_power[k].push(r[b + 4]);
                t.reactive_power[k].push(r[b + 5]);
            }
            for (p, c) in t.circulating_current.iter_mut().enumerate() {
                c.push(r[2 + 6 * n + p]);
            }
        }
        if rows.len() >= 2 {
            t.sample_interval = rows[1][0] - rows[0][0];
        }
        Some(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_and_columns() {
        assert_eq!(inverter_pairs(3), alloc::vec![(0, 1), (0, 2), (1, 2)]);
        assert!(inverter_pairs(1).is_empty());
        let t = SimulationTrace::with_capacity(3, 0);
        let names = t.column_names();
        assert_eq!(names.len(), 2 + 18 + 3);
        assert_eq!(names[2], "v1");
        assert_eq!(names.last().unwrap(), "icirc_23");
    }

    #[test]
    fn rows_round_trip() {
        let rows: Vec<Vec<f64>> = (0..4).map(|s| (0..2 + 12 + 1).map(|c| (s * 100 + c) as f64).collect()).collect();
        let t = SimulationTrace::from_rows(2, &rows).unwrap();
        for (s, r) in rows.iter().enumerate() {
            assert_eq!(&t.row(s), r);
        }
        assert!(SimulationTrace::from_rows(3, &rows).is_none());
    }
}
