use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper limit on the number of paths `enumerate_trajectories` will build.
pub const MAX_ENUMERATED_PATHS: f64 = 1e7;

const SUM_TOL: f64 = 1e-12;

/// Finite tabular MDP with a fixed horizon. Tables are flattened `[s][a][s']`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transitions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
    pub initial: Vec<f64>,
    pub horizon: usize,
}

/// Stochastic tabular policy, rows indexed by state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

impl PolicyTable {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, probs: vec![1.0 / n_actions as f64; n_states * n_actions] }
    }

    pub fn random<R: Rng>(n_states: usize, n_actions: usize, rng: &mut R) -> Self {
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for _ in 0..n_states {
            let row: Vec<f64> = (0..n_actions).map(|_| rng.random_range(0.05..1.0)).collect();
            let z: f64 = row.iter().sum();
            probs.extend(row.iter().map(|p| p / z));
        }
        Self { n_states, n_actions, probs }
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    fn check_against(&self, mdp: &GridMdp) -> Result<()> {
        if self.n_states != mdp.n_states || self.n_actions != mdp.n_actions {
            return Err(Error::Input("policy table shape does not match the MDP".into()));
        }
        for s in 0..self.n_states {
            let row = &self.probs[s * self.n_actions..(s + 1) * self.n_actions];
            if row.iter().any(|p| *p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > SUM_TOL {
                return Err(Error::Input(format!("policy row {s} is not a distribution")));
            }
        }
        Ok(())
    }
}

/// A length-H path `s_0, a_0, s_1, ..., a_{H-1}, s_H` with its per-step signals.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
}

impl GridMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        costs: Vec<f64>,
        initial: Vec<f64>,
        horizon: usize,
    ) -> Result<Self> {
        let m = Self { n_states, n_actions, transitions, rewards, costs, initial, horizon };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states;
        let na = self.n_actions;
        if n == 0 || na == 0 {
            return Err(Error::Input("grid MDP needs at least one state and action".into()));
        }
        if self.horizon < 1 {
            return Err(Error::Input("grid MDP horizon must be >= 1".into()));
        }
        let len = n * na * n;
        for (name, t) in
            [("transitions", &self.transitions), ("rewards", &self.rewards), ("costs", &self.costs)]
        {
            if t.len() != len {
                return Err(Error::Input(format!("{name} has {} entries, expected {len}", t.len())));
            }
        }
        if self.initial.len() != n {
            return Err(Error::Input("initial distribution has wrong length".into()));
        }
        for s in 0..n {
            for a in 0..na {
                let row = &self.transitions[(s * na + a) * n..(s * na + a + 1) * n];
                if row.iter().any(|p| *p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > SUM_TOL {
                    return Err(Error::Input(format!("P(.|{s},{a}) is not a distribution")));
                }
            }
        }
        if self.initial.iter().any(|p| *p < 0.0) || (self.initial.iter().sum::<f64>() - 1.0).abs() > SUM_TOL {
            return Err(Error::Input("initial distribution does not sum to 1".into()));
        }
        if self.costs.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::Input("costs must be non-negative".into()));
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::Input("rewards must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, s: usize, a: usize, s2: usize) -> usize {
        (s * self.n_actions + a) * self.n_states + s2
    }

    pub fn p(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transitions[self.index(s, a, s2)]
    }

    pub fn reward(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.rewards[self.index(s, a, s2)]
    }

    pub fn cost(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.costs[self.index(s, a, s2)]
    }

    /// Random dense MDP with rewards in [-1, 1] and costs in [0, 1].
    pub fn random<R: Rng>(n_states: usize, n_actions: usize, horizon: usize, rng: &mut R) -> Self {
        let n = n_states;
        let mut transitions = Vec::with_capacity(n * n_actions * n);
        for _ in 0..n * n_actions {
            let row: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
            let z: f64 = row.iter().sum();
            transitions.extend(row.iter().map(|p| p / z));
        }
        let len = n * n_actions * n;
        let rewards = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let costs = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
        let init: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let z: f64 = init.iter().sum();
        Self {
            n_states: n,
            n_actions,
            transitions,
            rewards,
            costs,
            initial: init.iter().map(|p| p / z).collect(),
            horizon,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses the plain-text tabular format.
    ///
    /// Lines are `s a s' prob reward cost`; a `horizon H` line and an
    /// `initial p_0 p_1 ...` line are required. `#` starts a comment.
    /// Triples that never appear have probability, reward and cost 0.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut horizon = None;
        let mut initial: Option<Vec<f64>> = None;
        let mut rows = Vec::new();
        let num = |tok: &str, line: usize| -> Result<f64> {
            tok.parse::<f64>().map_err(|_| Error::Input(format!("line {line}: bad number {tok:?}")))
        };
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks[0] {
                "horizon" => {
                    let h = toks
                        .get(1)
                        .and_then(|t| t.parse::<usize>().ok())
                        .ok_or_else(|| Error::Input(format!("line {line_no}: bad horizon")))?;
                    horizon = Some(h);
                }
                "initial" => {
                    initial = Some(toks[1..].iter().map(|t| num(t, line_no)).collect::<Result<_>>()?);
                }
                _ => {
                    if toks.len() != 6 {
                        return Err(Error::Input(format!(
                            "line {line_no}: expected `s a s' prob reward cost`"
                        )));
                    }
                    let idx = |t: &str| {
                        t.parse::<usize>()
                            .map_err(|_| Error::Input(format!("line {line_no}: bad index {t:?}")))
                    };
                    rows.push((
                        idx(toks[0])?,
                        idx(toks[1])?,
                        idx(toks[2])?,
                        num(toks[3], line_no)?,
                        num(toks[4], line_no)?,
                        num(toks[5], line_no)?,
                    ));
                }
            }
        }
        let horizon = horizon.ok_or_else(|| Error::Input("missing `horizon` line".into()))?;
        let initial = initial.ok_or_else(|| Error::Input("missing `initial` line".into()))?;
        let n = rows.iter().map(|r| r.0.max(r.2) + 1).max().unwrap_or(0).max(initial.len());
        let na = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        if initial.len() != n {
            return Err(Error::Input(format!("initial has {} entries for {n} states", initial.len())));
        }
        let len = n * na * n;
        let mut m = Self {
            n_states: n,
            n_actions: na,
            transitions: vec![0.0; len],
            rewards: vec![0.0; len],
            costs: vec![0.0; len],
            initial,
            horizon,
        };
        for (s, a, s2, p, r, c) in rows {
            let k = m.index(s, a, s2);
            m.transitions[k] = p;
            m.rewards[k] = r;
            m.costs[k] = c;
        }
        m.validate()?;
        Ok(m)
    }

    /// Number of paths a full enumeration over `horizon` steps would visit.
    pub fn path_count(&self, horizon: usize) -> f64 {
        self.n_states as f64 * ((self.n_states * self.n_actions) as f64).powi(horizon as i32)
    }

    /// Every positive-probability trajectory of length `horizon` with its probability.
    pub fn enumerate_trajectories(
        &self,
        policy: &PolicyTable,
        horizon: usize,
    ) -> Result<Vec<(Trajectory, f64)>> {
        policy.check_against(self)?;
        let count = self.path_count(horizon);
        if count > MAX_ENUMERATED_PATHS {
            return Err(Error::Capacity(format!(
                "{count:.3e} paths exceeds the enumeration limit of {MAX_ENUMERATED_PATHS:.0e}"
            )));
        }
        let mut out = Vec::new();
        for s0 in 0..self.n_states {
            let p0 = self.initial[s0];
            if p0 > 0.0 {
                let mut t = Trajectory {
                    states: vec![s0],
                    actions: Vec::new(),
                    rewards: Vec::new(),
                    costs: Vec::new(),
                };
                self.extend(policy, horizon, &mut t, p0, &mut out);
            }
        }
        Ok(out)
    }

    fn extend(
        &self,
        policy: &PolicyTable,
        horizon: usize,
        t: &mut Trajectory,
        prob: f64,
        out: &mut Vec<(Trajectory, f64)>,
    ) {
        if t.actions.len() == horizon {
            out.push((t.clone(), prob));
            return;
        }
        let s = *t.states.last().expect("trajectory has a start state");
        for a in 0..self.n_actions {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            for s2 in 0..self.n_states {
                let ps = self.p(s, a, s2);
                if ps == 0.0 {
                    continue;
                }
                t.states.push(s2);
                t.actions.push(a);
                t.rewards.push(self.reward(s, a, s2));
                t.costs.push(self.cost(s, a, s2));
                self.extend(policy, horizon, t, prob * pa * ps, out);
                t.states.pop();
                t.actions.pop();
                t.rewards.pop();
                t.costs.pop();
            }
        }
    }

    fn draw<R: Rng>(weights: impl Iterator<Item = f64>, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, w) in weights.enumerate() {
            if w > 0.0 {
                last = i;
            }
            acc += w;
            if u < acc {
                return i;
            }
        }
        last
    }

    /// Samples one episode of the MDP's own horizon.
    pub fn sample_episode<R: Rng>(&self, policy: &PolicyTable, rng: &mut R) -> Trajectory {
        let s0 = Self::draw(self.initial.iter().copied(), rng);
        let mut t = Trajectory {
            states: vec![s0],
            actions: Vec::with_capacity(self.horizon),
            rewards: Vec::with_capacity(self.horizon),
            costs: Vec::with_capacity(self.horizon),
        };
        let mut s = s0;
        for _ in 0..self.horizon {
            let a = Self::draw((0..self.n_actions).map(|a| policy.prob(s, a)), rng);
            let s2 = Self::draw((0..self.n_states).map(|x| self.p(s, a, x)), rng);
            t.actions.push(a);
            t.rewards.push(self.reward(s, a, s2));
            t.costs.push(self.cost(s, a, s2));
            t.states.push(s2);
            s = s2;
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain(n: usize, horizon: usize) -> GridMdp {
        let mut transitions = vec![0.0; n * n];
        for s in 0..n {
            transitions[s * n + (s + 1).min(n - 1)] = 1.0;
        }
        let mut initial = vec![0.0; n];
        initial[0] = 1.0;
        GridMdp::new(n, 1, transitions, vec![1.0; n * n], vec![0.0; n * n], initial, horizon).unwrap()
    }

    fn coin() -> GridMdp {
        GridMdp::new(2, 1, vec![0.5; 4], vec![0.0; 4], vec![0.0; 4], vec![1.0, 0.0], 2).unwrap()
    }

    #[test]
    fn deterministic_chain_has_one_path() {
        let m = chain(4, 3);
        let paths = m.enumerate_trajectories(&PolicyTable::uniform(4, 1), 3).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].1, 1.0);
        assert_eq!(paths[0].0.states, vec![0, 1, 2, 3]);
    }

    #[test]
    fn fair_coin_has_four_equal_paths() {
        let m = coin();
        let paths = m.enumerate_trajectories(&PolicyTable::uniform(2, 1), 2).unwrap();
        assert_eq!(paths.len(), 4);
        assert!(paths.iter().all(|(_, p)| *p == 0.25));
    }

    #[test]
    fn random_mdp_probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = GridMdp::random(3, 2, 3, &mut rng);
        let pi = PolicyTable::random(3, 2, &mut rng);
        let total: f64 = m.enumerate_trajectories(&pi, 3).unwrap().iter().map(|x| x.1).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn guard_rejects_large_enumerations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = GridMdp::random(10, 4, 8, &mut rng);
        let e = m.enumerate_trajectories(&PolicyTable::uniform(10, 4), 8).unwrap_err();
        assert!(matches!(e, Error::Capacity(_)));
    }

    #[test]
    fn text_and_json_formats_round_trip() {
        let text = "# coin\nhorizon 2\ninitial 1 0\n0 0 0 0.5 0 0\n0 0 1 0.5 1 0.2\n1 0 0 0.5 0 0\n1 0 1 0.5 1 0.2\n";
        let m = GridMdp::from_text(text).unwrap();
        assert_eq!(m.n_states, 2);
        assert_eq!(m.n_actions, 1);
        assert_eq!(m.cost(1, 0, 1), 0.2);
        let back = GridMdp::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn invalid_rows_are_rejected() {
        let text = "horizon 1\ninitial 1 0\n0 0 0 0.7 0 0\n1 0 1 1 0 0\n";
        assert!(GridMdp::from_text(text).is_err());
        let text = "horizon 1\ninitial 1 0\n0 0 0 1 0 -1\n1 0 1 1 0 0\n";
        assert!(GridMdp::from_text(text).is_err());
    }
}
