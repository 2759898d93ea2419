pub mod args;
mod commands;

use args::{Cli, Command};

/// Exit code: input or validation problems.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit code: non-finite values or failed numeric checks.
pub const EXIT_NUMERIC: i32 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn numeric(message: String) -> Self {
        Failure {
            code: EXIT_NUMERIC,
            message,
        }
    }
}

impl From<mixedsn::Error> for Failure {
    fn from(e: mixedsn::Error) -> Self {
        Failure {
            code: if e.is_numeric() {
                EXIT_NUMERIC
            } else {
                EXIT_VALIDATION
            },
            message: e.to_string(),
        }
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Pca(a) => commands::pca(a),
        Command::Patch(a) => commands::patch(a),
        Command::Split(a) => commands::split(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::PredictMap(a) => commands::predict_map(a),
        Command::Paramcount(a) => commands::paramcount(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Sweep(a) => commands::sweep(a),
    }
}
