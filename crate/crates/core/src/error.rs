use thiserror::Error;

/// Errors raised while loading or transforming market data.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read price table: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed price table: {0}")]
    Csv(#[from] csv::Error),
    #[error("parse error on line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("no ticker has a complete, positive price history")]
    NoSurvivors,
    #[error("panel is empty")]
    EmptyPanel,
    #[error("need at least {needed} rows, found {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("period `{label}` does not overlap the panel ({first}..={last})")]
    EmptyIntersection {
        label: String,
        first: chrono::NaiveDate,
        last: chrono::NaiveDate,
    },
    #[error("invalid period `{label}`: start {start} is not before end {end}")]
    InvalidPeriod {
        label: String,
        start: chrono::NaiveDate,
        end: chrono::NaiveDate,
    },
    #[error("invalid moments: {0}")]
    InvalidMoments(String),
    #[error("unknown ticker `{0}`")]
    UnknownTicker(String),
}

/// Errors from the universe-selection pipeline and its chat clients.
#[derive(Debug, Error)]
pub enum UniverseError {
    #[error("template `{template}` has no `{placeholder}` placeholder")]
    MissingPlaceholder {
        template: String,
        placeholder: &'static str,
    },
    #[error("substitution for `{0}` is empty")]
    EmptySubstitution(&'static str),
    #[error("replay call {call}: expected a `{expected}` prompt, transcript has `{found}`")]
    ReplayMismatch {
        call: usize,
        expected: String,
        found: String,
    },
    #[error("replay transcript exhausted after {0} calls")]
    FixtureExhausted(usize),
    #[error("authentication rejected by chat endpoint (HTTP {0})")]
    Auth(u16),
    #[error("chat request failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("chat endpoint returned an unusable body: {0}")]
    BadResponse(String),
    #[error("missing configuration: {0}")]
    Config(String),
    #[error("malformed transcript: {0}")]
    Transcript(String),
    #[error("only {available} distinct tickers observed, cannot select {requested}")]
    InsufficientTickers { requested: usize, available: usize },
    #[error("malformed weight list: {0}")]
    MalformedWeights(String),
    #[error("ticker `{0}` is not part of the universe")]
    UnknownTicker(String),
    #[error("universe member `{0}` has no weight in the response")]
    MissingWeight(String),
    #[error("weight `{0}` is not a number")]
    NonNumericWeight(String),
    #[error("weights must be strictly positive, got {0}")]
    NonPositiveWeight(f64),
    #[error("weights sum to zero")]
    ZeroSum,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors from the continuous and mixed-integer portfolio solvers.
#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("target return {target} exceeds the maximum achievable {max_achievable}")]
    InfeasibleTarget { target: f64, max_achievable: f64 },
    #[error("infeasible problem: {0}")]
    Infeasible(String),
    #[error("solver did not converge within {0} iterations")]
    NonConvergence(usize),
    #[error("problem is unbounded along a zero-curvature direction")]
    Unbounded,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("frontier point {index} (epsilon = {epsilon}) failed: {source}")]
    FrontierPoint {
        index: usize,
        epsilon: f64,
        #[source]
        source: Box<OptimizeError>,
    },
    #[error("frontier needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("frontier is empty")]
    EmptyFrontier,
    #[error("portfolio at frontier point {0} has zero variance")]
    ZeroVariance(usize),
    #[error("universe is empty")]
    EmptyUniverse,
    #[error("enumeration needs {subsets} subsets, budget is {budget}")]
    CombinatorialBudget { subsets: u128, budget: u128 },
    #[error("node budget of {0} exhausted before any feasible portfolio was found")]
    NodeBudgetExhausted(u64),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Errors from portfolio evaluation.
#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("ticker `{0}` is missing from the return panel")]
    MissingTicker(String),
    #[error("return series is empty")]
    Empty,
    #[error("need at least {needed} observations, found {found}")]
    TooFewObservations { needed: usize, found: usize },
    #[error("return {value} at position {index} wipes out the portfolio")]
    TotalLoss { index: usize, value: f64 },
    #[error("volatility is zero, Sharpe ratio undefined")]
    ZeroVolatility,
    #[error("curves are not aligned: {0}")]
    Misaligned(String),
    #[error("ticker `{0}` has no sector")]
    UnmappedTicker(String),
    #[error("length mismatch: {0}")]
    Length(String),
}

/// Errors from reading or writing the delimited file formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}
