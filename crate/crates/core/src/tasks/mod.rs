//! Task generators and verifiers grounding the accuracy reward: the
//! multi-solution countdown family and a 4×4 Sudoku verifier. All arithmetic
//! is exact-rational; nothing here compares floats.

pub mod countdown;
mod expr;
mod sudoku;

pub use countdown::{
    enumerate_solutions, gen_countdown, mcd_accuracy, render_query, verify_solution,
    verify_solution_with, CountdownInstance, GenParams, InvalidReason, QuerySpec,
};
pub use expr::{
    parse_expression, parse_rational, DistinctnessKey, Exact, Expr, OpCounts, Solution,
};
pub use sudoku::{parse_grid, verify_sudoku4, SudokuGrid, SudokuPuzzle, SudokuViolation};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TasksError {
    #[error("parse error at {at}: {reason}")]
    Parse { at: usize, reason: String },
    #[error("division by zero")]
    DivisionByZero,
    #[error("intermediate value {value} is not an integer")]
    NonIntegerIntermediate { value: String },
    #[error("enumeration cap {cap} exceeded (spent {spent})")]
    CapExceeded { cap: u64, spent: u64 },
    #[error("generation budget exhausted after {attempts} attempts: {detail}")]
    GenerationBudgetExceeded { attempts: u32, detail: String },
    #[error("bad grid: {0}")]
    BadGrid(String),
}
