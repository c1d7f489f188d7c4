//! Simple and mixed tabulation hashing with moment bounds for hash-based sums.

// `!(x >= a)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod experiments;
pub mod moments;
pub mod numeric;
pub mod tabulation;
pub mod valuefn;

pub use error::{Error, Result};
pub use tabulation::{
    Key, MixedSignFunction, MixedTabHash, Scheme, SchemeKind, SchemeParams, SchemeSpec, SignFn, SignFunction,
    Signer, SimpleTabHash, TabHasher,
};
pub use valuefn::{QueryValueFunction, ValueFunction, ValueStats};
