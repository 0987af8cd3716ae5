//! Cooperative games over small player sets.
//!
//! A game is stored as a dense [`CoalitionValueTable`]: one value per subset
//! of players, indexed by the coalition's bit pattern (player `i` is bit `i`).
//! On top of it sit the exact Shapley value, the Shapley value ratio, the
//! bivariate Shapley interaction (two independent formulas) and a permutation
//! sampling estimator for games too large to enumerate.

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest player count accepted by the exact (enumerating) operations.
pub const MAX_EXACT_PLAYERS: usize = 24;

/// Largest player count the bit-pattern encoding can represent.
pub const MAX_PLAYERS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoalitionError {
    #[error("a game needs at least one player")]
    NoPlayers,
    #[error("{n} players exceeds the limit of {limit}")]
    TooManyPlayers { n: usize, limit: usize },
    #[error("{got} player names given for {n} players")]
    NameCount { n: usize, got: usize },
    #[error("duplicate player name {0:?}")]
    DuplicateName(String),
    #[error("player index {index} out of range for {n} players")]
    PlayerOutOfRange { index: usize, n: usize },
    #[error("value table has {got} entries, expected {expected}")]
    WrongLength { expected: usize, got: usize },
    #[error("value table incomplete: coalition {0} has no value")]
    MissingCoalition(u64),
    #[error("coalition key {0:?} is not a subset of the player set")]
    BadCoalitionKey(String),
    #[error("value of coalition {0} is not finite")]
    NonFinite(u64),
    #[error("an interaction needs two distinct players, got {0} twice")]
    SamePlayer(usize),
    #[error("Shapley value ratio is undefined when every value is zero")]
    UndefinedRatio,
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("game oracle failed on coalition {coalition}: {message}")]
    Oracle { coalition: u64, message: String },
}

pub type Result<T, E = CoalitionError> = std::result::Result<T, E>;

/// A subset of players, player `i` stored in bit `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Coalition(pub u64);

impl Coalition {
    pub const EMPTY: Coalition = Coalition(0);

    /// The grand coalition of `n` players.
    pub fn full(n: usize) -> Self {
        if n >= 64 {
            Coalition(u64::MAX)
        } else {
            Coalition((1u64 << n) - 1)
        }
    }

    pub fn singleton(i: usize) -> Self {
        Coalition(1u64 << i)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn with(self, i: usize) -> Self {
        Coalition(self.0 | 1u64 << i)
    }

    pub fn without(self, i: usize) -> Self {
        Coalition(self.0 & !(1u64 << i))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn members(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..64).filter(move |i| bits >> i & 1 == 1)
    }

    pub fn is_subset_of(self, n: usize) -> bool {
        self.0 & !Coalition::full(n).0 == 0
    }
}

impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.members().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

/// The players of a game, optionally with display names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlayerSet {
    n: usize,
    names: Option<Vec<String>>,
}

impl PlayerSet {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(CoalitionError::NoPlayers);
        }
        if n > MAX_PLAYERS {
            return Err(CoalitionError::TooManyPlayers { n, limit: MAX_PLAYERS });
        }
        Ok(PlayerSet { n, names: None })
    }

    pub fn named<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut set = PlayerSet::new(names.len())?;
        for (k, name) in names.iter().enumerate() {
            if names[..k].contains(name) {
                return Err(CoalitionError::DuplicateName(name.clone()));
            }
        }
        set.names = Some(names);
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    /// Display label of player `i`: its name, or its index.
    pub fn label(&self, i: usize) -> String {
        match &self.names {
            Some(names) => names[i].clone(),
            None => i.to_string(),
        }
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i < self.n {
            Ok(())
        } else {
            Err(CoalitionError::PlayerOutOfRange { index: i, n: self.n })
        }
    }
}

/// The characteristic function `v` of a game, one finite value per coalition.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalitionValueTable {
    players: PlayerSet,
    values: Vec<f64>,
}

impl CoalitionValueTable {
    /// Builds a table from values indexed by coalition bit pattern.
    pub fn new(players: PlayerSet, values: Vec<f64>) -> Result<Self> {
        let n = players.len();
        if n > MAX_EXACT_PLAYERS {
            return Err(CoalitionError::TooManyPlayers { n, limit: MAX_EXACT_PLAYERS });
        }
        let expected = 1usize << n;
        if values.len() != expected {
            return Err(CoalitionError::WrongLength { expected, got: values.len() });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(CoalitionError::NonFinite(bad as u64));
        }
        Ok(CoalitionValueTable { players, values })
    }

    /// Builds a table by evaluating `v` on every coalition of `players`.
    pub fn from_fn(players: PlayerSet, mut v: impl FnMut(Coalition) -> f64) -> Result<Self> {
        let n = players.len();
        if n > MAX_EXACT_PLAYERS {
            return Err(CoalitionError::TooManyPlayers { n, limit: MAX_EXACT_PLAYERS });
        }
        let values = (0..1u64 << n).map(|s| v(Coalition(s))).collect();
        Self::new(players, values)
    }

    /// Builds a table from a sparse map; every coalition must be present.
    pub fn from_map(players: PlayerSet, map: &HashMap<u64, f64>) -> Result<Self> {
        let n = players.len();
        if n > MAX_EXACT_PLAYERS {
            return Err(CoalitionError::TooManyPlayers { n, limit: MAX_EXACT_PLAYERS });
        }
        if let Some(&bad) = map.keys().find(|&&k| !Coalition(k).is_subset_of(n)) {
            return Err(CoalitionError::BadCoalitionKey(bad.to_string()));
        }
        let values = (0..1u64 << n)
            .map(|s| map.get(&s).copied().ok_or(CoalitionError::MissingCoalition(s)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(players, values)
    }

    pub fn players(&self) -> &PlayerSet {
        &self.players
    }

    pub fn n(&self) -> usize {
        self.players.len()
    }

    pub fn value(&self, s: Coalition) -> f64 {
        self.values[s.0 as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `v(N) - v(∅)`, the total the Shapley values must distribute.
    pub fn total_gain(&self) -> f64 {
        self.value(Coalition::full(self.n())) - self.value(Coalition::EMPTY)
    }

    /// Elementwise sum of two games on the same players.
    pub fn add(&self, other: &CoalitionValueTable) -> Result<Self> {
        if other.n() != self.n() {
            return Err(CoalitionError::WrongLength { expected: self.values.len(), got: other.values.len() });
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Self::new(self.players.clone(), values)
    }

    /// The game whose players are unions ("groups") of this game's players.
    ///
    /// Coalition `T` of the new game is worth `v(⋃_{g ∈ T} groups[g])`.
    /// Restriction to a sub-player-set and player merging are both projections.
    pub fn project(&self, groups: &[Coalition]) -> Result<Self> {
        let players = PlayerSet::new(groups.len())?;
        Self::from_fn(players, |t| {
            let s = t.members().fold(0u64, |acc, g| acc | groups[g].0);
            self.value(Coalition(s))
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("value tables always serialize")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Wire form: `{"n":3,"names":[...],"values":{"0":0.0,"1":1.0,...}}`.
#[derive(Serialize, Deserialize)]
struct TableWire {
    n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    names: Option<Vec<String>>,
    values: OrderedValues,
}

struct OrderedValues(Vec<(u64, f64)>);

impl Serialize for OrderedValues {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = ser.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(&k.to_string(), v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for OrderedValues {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw: HashMap<String, f64> = HashMap::deserialize(de)?;
        let mut out = Vec::with_capacity(raw.len());
        for (k, v) in raw {
            let key = k
                .parse::<u64>()
                .map_err(|_| serde::de::Error::custom(CoalitionError::BadCoalitionKey(k.clone())))?;
            out.push((key, v));
        }
        out.sort_by_key(|&(k, _)| k);
        Ok(OrderedValues(out))
    }
}

impl Serialize for CoalitionValueTable {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        TableWire {
            n: self.n(),
            names: self.players.names.clone(),
            values: OrderedValues(self.values.iter().enumerate().map(|(k, &v)| (k as u64, v)).collect()),
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for CoalitionValueTable {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let wire = TableWire::deserialize(de)?;
        let players = match wire.names {
            Some(names) if names.len() != wire.n => {
                return Err(D::Error::custom(CoalitionError::NameCount { n: wire.n, got: names.len() }))
            }
            Some(names) => PlayerSet::named(names),
            None => PlayerSet::new(wire.n),
        }
        .map_err(D::Error::custom)?;
        let mut map = HashMap::with_capacity(wire.values.0.len());
        for (k, v) in wire.values.0 {
            if map.insert(k, v).is_some() {
                return Err(D::Error::custom(format!("duplicate coalition key {k}")));
            }
        }
        CoalitionValueTable::from_map(players, &map).map_err(D::Error::custom)
    }
}

/// `ln(k!)` for `k = 0..=n`.
fn log_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0f64;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Shapley weights `|S|! (n-|S|-1)! / n!` indexed by `|S|`.
fn shapley_weights(n: usize) -> Vec<f64> {
    let lf = log_factorials(n);
    (0..n).map(|k| (lf[k] + lf[n - k - 1] - lf[n]).exp()).collect()
}

/// Interaction weights `|S|! (n-|S|-2)! / (n-1)!` indexed by `|S|`.
fn interaction_weights(n: usize) -> Vec<f64> {
    let lf = log_factorials(n);
    (0..n - 1).map(|k| (lf[k] + lf[n - k - 2] - lf[n - 1]).exp()).collect()
}

fn shapley_with_weights(table: &CoalitionValueTable, i: usize, weights: &[f64]) -> f64 {
    let bit = 1u64 << i;
    let mut acc = 0.0;
    for s in 0..1u64 << table.n() {
        if s & bit != 0 {
            continue;
        }
        let gain = table.values[(s | bit) as usize] - table.values[s as usize];
        acc += weights[s.count_ones() as usize] * gain;
    }
    acc
}

/// Exact Shapley value of player `i`, enumerating all coalitions without it.
pub fn shapley_exact(table: &CoalitionValueTable, i: usize) -> Result<f64> {
    table.players.check_index(i)?;
    Ok(shapley_with_weights(table, i, &shapley_weights(table.n())))
}

/// Shapley values of every player, with ratio and efficiency residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub phi: Vec<f64>,
    /// `None` when every Shapley value is zero.
    pub ratio: Option<Vec<f64>>,
    /// `Σφ - (v(N) - v(∅))`.
    pub efficiency_residual: f64,
}

pub fn shapley_all(table: &CoalitionValueTable) -> Result<AttributionResult> {
    let weights = shapley_weights(table.n());
    let phi: Vec<f64> = (0..table.n()).map(|i| shapley_with_weights(table, i, &weights)).collect();
    let efficiency_residual = phi.iter().sum::<f64>() - table.total_gain();
    let ratio = match value_ratio(&phi) {
        Ok(r) => Some(r),
        Err(CoalitionError::UndefinedRatio) => None,
        Err(e) => return Err(e),
    };
    Ok(AttributionResult { phi, ratio, efficiency_residual })
}

/// Shapley value ratio: each value divided by the sum of absolute values.
pub fn value_ratio(phi: &[f64]) -> Result<Vec<f64>> {
    let denom: f64 = phi.iter().map(|p| p.abs()).sum();
    if denom == 0.0 || !denom.is_finite() {
        return Err(CoalitionError::UndefinedRatio);
    }
    Ok(phi.iter().map(|p| p / denom).collect())
}

fn check_pair(table: &CoalitionValueTable, i: usize, j: usize) -> Result<()> {
    table.players.check_index(i)?;
    table.players.check_index(j)?;
    if i == j {
        return Err(CoalitionError::SamePlayer(i));
    }
    Ok(())
}

/// Bivariate Shapley interaction of players `i` and `j` as a weighted sum of
/// second differences `v(S∪{i,j}) - v(S∪{i}) - v(S∪{j}) + v(S)`.
pub fn bsi_closed_form(table: &CoalitionValueTable, i: usize, j: usize) -> Result<f64> {
    check_pair(table, i, j)?;
    let weights = interaction_weights(table.n());
    // fixed operand order keeps the result bitwise symmetric in (i, j)
    let (bi, bj) = (1u64 << i.min(j), 1u64 << i.max(j));
    let v = &table.values;
    let mut acc = 0.0;
    for s in 0..1u64 << table.n() {
        if s & (bi | bj) != 0 {
            continue;
        }
        let delta = v[(s | bi | bj) as usize] - v[(s | bi) as usize] - v[(s | bj) as usize] + v[s as usize];
        acc += weights[s.count_ones() as usize] * delta;
    }
    Ok(acc)
}

/// Bivariate Shapley interaction computed by merging `i` and `j` into one
/// player and subtracting their Shapley values in the games without the other.
pub fn bsi_merged(table: &CoalitionValueTable, i: usize, j: usize) -> Result<f64> {
    check_pair(table, i, j)?;
    let n = table.n();
    let others: Vec<Coalition> = (0..n).filter(|&k| k != i && k != j).map(Coalition::singleton).collect();

    let mut merged_groups = others.clone();
    merged_groups.push(Coalition::singleton(i).with(j));
    let merged = table.project(&merged_groups)?;
    let phi_pair = shapley_exact(&merged, merged_groups.len() - 1)?;

    let without = |drop: usize, keep: usize| -> Result<f64> {
        let groups: Vec<Coalition> = (0..n).filter(|&k| k != drop).map(Coalition::singleton).collect();
        let pos = groups.iter().position(|g| g.contains(keep)).expect("kept player is present");
        shapley_exact(&table.project(&groups)?, pos)
    };
    let phi_i = without(j, i)?;
    let phi_j = without(i, j)?;
    Ok(phi_pair - (phi_i + phi_j))
}

/// Interactions of every unordered pair `(i, j)`, `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionResult {
    pub pairs: Vec<((usize, usize), f64)>,
}

impl InteractionResult {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let key = (i.min(j), i.max(j));
        self.pairs.iter().find(|(k, _)| *k == key).map(|&(_, v)| v)
    }
}

pub fn bsi_all(table: &CoalitionValueTable) -> Result<InteractionResult> {
    let n = table.n();
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            pairs.push(((i, j), bsi_closed_form(table, i, j)?));
        }
    }
    Ok(InteractionResult { pairs })
}

/// Permutation-sampling estimate of the Shapley values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub phi_hat: Vec<f64>,
    pub stderr: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
}

/// Options for [`shapley_montecarlo`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McOptions {
    pub samples: usize,
    pub seed: u64,
    /// Worker threads; the estimate does not depend on this.
    pub threads: usize,
}

impl McOptions {
    pub fn new(samples: usize, seed: u64) -> Self {
        McOptions { samples, seed, threads: 1 }
    }
}

const MC_CHUNK: usize = 1024;

/// Running mean and sum of squared deviations per player.
#[derive(Clone)]
struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Moments { count: 0.0, mean: vec![0.0; n], m2: vec![0.0; n] }
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1.0;
        for ((m, s), &xi) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = xi - *m;
            *m += d / self.count;
            *s += d * (xi - *m);
        }
    }

    fn merge(&mut self, other: &Moments) {
        if other.count == 0.0 {
            return;
        }
        let total = self.count + other.count;
        for k in 0..self.mean.len() {
            let d = other.mean[k] - self.mean[k];
            self.mean[k] += d * other.count / total;
            self.m2[k] += other.m2[k] + d * d * self.count * other.count / total;
        }
        self.count = total;
    }
}

/// Estimates Shapley values by averaging marginal contributions along
/// uniformly random player orderings.
///
/// Permutation `k` is drawn from its own ChaCha stream (`seed`, stream `k`),
/// and partial moments are merged in fixed chunk order, so the estimate is
/// bitwise reproducible for any thread count.
pub fn shapley_montecarlo<G, E>(game: &G, n: usize, opts: McOptions) -> Result<McEstimate>
where
    G: Fn(Coalition) -> std::result::Result<f64, E> + Sync,
    E: fmt::Display,
{
    if n == 0 {
        return Err(CoalitionError::NoPlayers);
    }
    if n > MAX_PLAYERS {
        return Err(CoalitionError::TooManyPlayers { n, limit: MAX_PLAYERS });
    }
    if opts.samples == 0 {
        return Err(CoalitionError::NoSamples);
    }
    let chunks = opts.samples.div_ceil(MC_CHUNK);

    let run_chunk = |c: usize| -> Result<Moments> {
        let mut moments = Moments::new(n);
        let mut order: Vec<usize> = (0..n).collect();
        let mut marginal = vec![0.0; n];
        let lo = c * MC_CHUNK;
        let hi = (lo + MC_CHUNK).min(opts.samples);
        for k in lo..hi {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(k as u64);
            order.sort_unstable();
            order.shuffle(&mut rng);
            let eval = |s: Coalition| {
                game(s).map_err(|e| CoalitionError::Oracle { coalition: s.0, message: e.to_string() })
            };
            let mut pred = Coalition::EMPTY;
            let mut prev = eval(pred)?;
            for &i in &order {
                pred = pred.with(i);
                let cur = eval(pred)?;
                marginal[i] = cur - prev;
                prev = cur;
            }
            moments.push(&marginal);
        }
        Ok(moments)
    };

    let threads = opts.threads.clamp(1, chunks);
    let partials: Vec<Result<Moments>> = if threads == 1 {
        (0..chunks).map(run_chunk).collect()
    } else {
        let mut slots: Vec<Option<Result<Moments>>> = vec![None; chunks];
        let next = std::sync::atomic::AtomicUsize::new(0);
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|_| {
                    scope.spawn(|| {
                        let mut done = Vec::new();
                        loop {
                            let c = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                            if c >= chunks {
                                break done;
                            }
                            done.push((c, run_chunk(c)));
                        }
                    })
                })
                .collect();
            for h in handles {
                for (c, r) in h.join().expect("sampling worker panicked") {
                    slots[c] = Some(r);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every chunk ran")).collect()
    };

    let mut total = Moments::new(n);
    for part in partials {
        total.merge(&part?);
    }
    let m = opts.samples as f64;
    let stderr = total
        .m2
        .iter()
        .map(|&s| if opts.samples > 1 { (s.max(0.0) / (m - 1.0) / m).sqrt() } else { 0.0 })
        .collect();
    Ok(McEstimate { phi_hat: total.mean, stderr, samples: opts.samples, seed: opts.seed })
}
