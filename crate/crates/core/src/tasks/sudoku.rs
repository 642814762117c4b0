//! 4×4 Sudoku verification for generalization evaluation.

use serde::{Deserialize, Serialize};

use super::TasksError;

/// A fully filled 4×4 grid with values in 1..=4.
pub type SudokuGrid = [[u8; 4]; 4];

/// Puzzle clues: fixed cells the solution must extend.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SudokuPuzzle {
    pub clues: [[Option<u8>; 4]; 4],
}

/// Why a grid is not a valid solution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SudokuViolation {
    BadValue { row: usize, col: usize, value: u8 },
    RowDuplicate { row: usize },
    ColumnDuplicate { col: usize },
    BoxDuplicate { boxed: usize },
    ClueViolated { row: usize, col: usize },
}

impl std::fmt::Display for SudokuViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SudokuViolation::BadValue { row, col, value } => {
                write!(f, "cell ({},{}) holds {}, outside 1..=4", row, col, value)
            }
            SudokuViolation::RowDuplicate { row } => write!(f, "row {} repeats a value", row),
            SudokuViolation::ColumnDuplicate { col } => write!(f, "column {} repeats a value", col),
            SudokuViolation::BoxDuplicate { boxed } => write!(f, "box {} repeats a value", boxed),
            SudokuViolation::ClueViolated { row, col } => {
                write!(f, "clue at ({},{}) not preserved", row, col)
            }
        }
    }
}

/// Valid iff every row, column, and 2×2 box contains {1,2,3,4} exactly once
/// and the grid extends the puzzle clues.
pub fn verify_sudoku4(grid: &SudokuGrid, puzzle: &SudokuPuzzle) -> Result<(), SudokuViolation> {
    for (r, row) in grid.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if !(1..=4).contains(&v) {
                return Err(SudokuViolation::BadValue {
                    row: r,
                    col: c,
                    value: v,
                });
            }
            if let Some(clue) = puzzle.clues[r][c] {
                if clue != v {
                    return Err(SudokuViolation::ClueViolated { row: r, col: c });
                }
            }
        }
    }
    for r in 0..4 {
        let mut seen = [false; 5];
        for c in 0..4 {
            let v = grid[r][c] as usize;
            if seen[v] {
                return Err(SudokuViolation::RowDuplicate { row: r });
            }
            seen[v] = true;
        }
    }
    for c in 0..4 {
        let mut seen = [false; 5];
        for r in 0..4 {
            let v = grid[r][c] as usize;
            if seen[v] {
                return Err(SudokuViolation::ColumnDuplicate { col: c });
            }
            seen[v] = true;
        }
    }
    for b in 0..4 {
        let (r0, c0) = ((b / 2) * 2, (b % 2) * 2);
        let mut seen = [false; 5];
        for dr in 0..2 {
            for dc in 0..2 {
                let v = grid[r0 + dr][c0 + dc] as usize;
                if seen[v] {
                    return Err(SudokuViolation::BoxDuplicate { boxed: b });
                }
                seen[v] = true;
            }
        }
    }
    Ok(())
}

/// Parses a grid from text holding exactly 16 digits in row-major order;
/// every non-digit character is a separator.
pub fn parse_grid(text: &str) -> Result<SudokuGrid, TasksError> {
    let digits: Vec<u8> = text
        .chars()
        .filter(|c| c.is_ascii_digit())
        .map(|c| c as u8 - b'0')
        .collect();
    if digits.len() != 16 {
        return Err(TasksError::BadGrid(format!(
            "expected 16 digits, found {}",
            digits.len()
        )));
    }
    let mut grid = [[0u8; 4]; 4];
    for (i, d) in digits.into_iter().enumerate() {
        grid[i / 4][i % 4] = d;
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CANONICAL: SudokuGrid = [[1, 2, 3, 4], [3, 4, 1, 2], [2, 1, 4, 3], [4, 3, 2, 1]];

    #[test]
    fn canonical_grid_is_valid() {
        verify_sudoku4(&CANONICAL, &SudokuPuzzle::default()).unwrap();
    }

    #[test]
    fn clue_violation_detected() {
        let mut puzzle = SudokuPuzzle::default();
        puzzle.clues[0][0] = Some(2);
        assert_eq!(
            verify_sudoku4(&CANONICAL, &puzzle),
            Err(SudokuViolation::ClueViolated { row: 0, col: 0 })
        );
    }

    #[test]
    fn box_duplicate_detected() {
        // rows and columns stay Latin, but boxes repeat values
        let grid: SudokuGrid = [[1, 2, 3, 4], [2, 3, 4, 1], [3, 4, 1, 2], [4, 1, 2, 3]];
        assert_eq!(
            verify_sudoku4(&grid, &SudokuPuzzle::default()),
            Err(SudokuViolation::BoxDuplicate { boxed: 0 })
        );
    }

    #[test]
    fn grid_parsing() {
        let grid = parse_grid("1 2 3 4 | 3 4 1 2 | 2 1 4 3 | 4 3 2 1").unwrap();
        assert_eq!(grid, CANONICAL);
        assert!(parse_grid("1 2 3").is_err());
    }
}
