use std::fmt;
use std::str::FromStr;

use super::TabularMdp;
use crate::error::{ensure, Error, Result};
use crate::Real;

/// Deep Sea of the given depth.
///
/// Cells `(row, col)` with `0 <= col <= row < depth`; the bottom row is
/// absorbing. Action 0 moves down-right, action 1 down-left (clamped at
/// column 0). Down-right costs `1/(100 d)`, down-left earns the same amount,
/// and entering the bottom-right cell earns 1 more.
pub fn deep_sea<T: Real>(depth: usize) -> Result<TabularMdp<T>> {
    ensure!(depth >= 1, InvalidArgument, "deep sea depth must be at least 1");
    let d = depth;
    let step = T::one() / T::from_usize_lossy(100 * d);
    let mut b = TabularMdp::builder();
    let mut id = vec![vec![0; d]; d];
    for (r, row) in id.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate().take(r + 1) {
            *cell = b.state(format!("({r},{c})"));
        }
    }
    for r in 0..d {
        for c in 0..=r {
            let s = id[r][c];
            if r == d - 1 {
                b.goal(s);
                continue;
            }
            let treasure = if r + 1 == d - 1 && c + 1 == d - 1 { T::one() } else { T::zero() };
            b.edge(s, 0, id[r + 1][c + 1], treasure - step);
            b.edge(s, 1, id[r + 1][c.saturating_sub(1)], step);
        }
    }
    b.initial(vec![(id[0][0], T::one())]);
    b.build()
}

/// Two states: `s1` with a rewarded self loop (action 0) and a move to the
/// goal `s2` (action 1), both with reward -1.
pub fn two_state_example<T: Real>() -> TabularMdp<T> {
    let mut b = TabularMdp::builder();
    let s1 = b.state("s1");
    let s2 = b.state("s2");
    b.goal(s2)
        .edge(s1, 0, s1, -T::one())
        .edge(s1, 1, s2, -T::one())
        .initial(vec![(s1, T::one())]);
    b.build().expect("valid built-in MDP")
}

/// The five-state chain: `s1 -a1,r1-> s2 -a1,r3-> s4` and
/// `s1 -a2,r2-> s3 -a2,r4-> s5`, with `s4`, `s5` absorbing.
pub fn five_state_example<T: Real>(r1: T, r2: T, r3: T, r4: T) -> TabularMdp<T> {
    let mut b = TabularMdp::builder();
    let s: Vec<_> = (1..=5).map(|i| b.state(format!("s{i}"))).collect();
    b.goal(s[3])
        .goal(s[4])
        .edge(s[0], 0, s[1], r1)
        .edge(s[0], 1, s[2], r2)
        .edge(s[1], 0, s[3], r3)
        .edge(s[2], 1, s[4], r4)
        .initial(vec![(s[0], T::one())]);
    b.build().expect("valid built-in MDP")
}

/// Environment names understood by the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    DeepSea(usize),
    TwoState,
    FiveState([f64; 4]),
}

impl EnvSpec {
    pub fn build<T: Real>(&self) -> Result<TabularMdp<T>> {
        match self {
            EnvSpec::DeepSea(d) => deep_sea(*d),
            EnvSpec::TwoState => Ok(two_state_example()),
            EnvSpec::FiveState(r) => Ok(five_state_example(T::c(r[0]), T::c(r[1]), T::c(r[2]), T::c(r[3]))),
        }
    }
}

impl FromStr for EnvSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s, None),
        };
        let bad = || Error::InvalidArgument(format!("unrecognised environment '{s}'"));
        match (name, arg) {
            ("two_state", None) => Ok(EnvSpec::TwoState),
            ("deep_sea", Some(a)) => {
                let d: usize = a.parse().map_err(|_| bad())?;
                ensure!(d >= 1, InvalidArgument, "deep sea depth must be at least 1");
                Ok(EnvSpec::DeepSea(d))
            }
            ("five_state", Some(a)) => {
                let vals = a
                    .split(',')
                    .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>>>()?;
                let r: [f64; 4] = vals.try_into().map_err(|_| bad())?;
                ensure!(r.iter().all(|x| x.is_finite()), InvalidArgument, "rewards must be finite");
                Ok(EnvSpec::FiveState(r))
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for EnvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvSpec::DeepSea(d) => write!(f, "deep_sea:{d}"),
            EnvSpec::TwoState => write!(f, "two_state"),
            EnvSpec::FiveState(r) => write!(f, "five_state:{},{},{},{}", r[0], r[1], r[2], r[3]),
        }
    }
}
