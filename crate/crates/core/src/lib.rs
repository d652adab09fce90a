//! Coset encodings for multi-level-cell phase-change memory.

pub mod analytic;
pub mod baselines;
pub mod bits;
pub mod codec;
pub mod crypto;
pub mod cost;
pub mod ecc;
pub mod harness;
pub mod error;
pub mod pcm;

pub use bits::DataBlock;
pub use codec::{
    extract_left_digits, generate_kernels, vcc_decode, vcc_encode, write_cost, CosetKernel, EncodedWord,
    KernelSource, OldState, Selection, VccConfig, VccMode,
};
pub use cost::{
    lexicographic, opt_energy, opt_saw, CellView, CostFunction, CostVector, Lexicographic, MlcEnergy, OnesCount, OptEnergy,
    OptSaw, SawCount,
    SymbolTransitionTable,
};
pub use error::{Error, Result};
