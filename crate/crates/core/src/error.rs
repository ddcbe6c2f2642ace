use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("loss node must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("non-finite gradient for parameter `{0}`; update rejected")]
    NonFiniteGradient(String),
    #[error("checkpoint error at byte offset {offset}: {message}")]
    Checkpoint { offset: u64, message: String },
    #[error("checkpoint does not match the expected network: {0}")]
    ManifestMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BoardError {
    #[error("board must be at least 6x6, got {width}x{height}")]
    TooSmall { width: usize, height: usize },
    #[error("no home tile")]
    NoHome,
    #[error("multiple home tiles")]
    MultipleHomes,
    #[error("no source tiles")]
    NoSource,
    #[error("too many source tiles ({0}, at most 4)")]
    TooManySources(usize),
    #[error("source disconnected from home at ({x}, {y})")]
    SourceDisconnected { x: usize, y: usize },
    #[error("board text: {0}")]
    Parse(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GameError {
    #[error("illegal action: {0}")]
    IllegalAction(String),
    #[error("game is over")]
    GameOver,
    #[error("invalid game config: {0}")]
    Config(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("action index {index} out of range for {width}x{height} board")]
    IndexOutOfRange { index: usize, width: usize, height: usize },
    #[error("position ({x}, {y}) outside {width}x{height} board")]
    OutOfBounds { x: usize, y: usize, width: usize, height: usize },
    #[error("mask has {mask} entries but q has {q}")]
    SizeMismatch { q: usize, mask: usize },
    #[error("no legal actions")]
    NoLegalActions,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("replay bank holds {size} experiences, batch needs {batch}")]
    Underfull { size: usize, batch: usize },
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Error)]
pub enum LossNetError {
    #[error("no map loss records to train on")]
    NoRecords,
    #[error("invalid loss network config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("no valid board after {0} rejected samples; config infeasible")]
    TooManyRejects(usize),
}

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("invalid evolution config: {0}")]
    Config(String),
    #[error("feasible fitness requested for an infeasible chromosome (constrained fitness {0})")]
    Infeasible(f64),
    #[error(transparent)]
    Gen(#[from] GenError),
}

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("{schedule} schedule: {source}")]
    Generator {
        schedule: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    LossNet(#[from] LossNetError),
    #[error(transparent)]
    Board(#[from] BoardError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
