//! Confidential storage over several untrusted providers.
//!
//! Objects are classified by secret level and by the operations they must
//! support later, and [`router`] sends each one down a matching pipeline:
//! kept local, stored in the clear, encrypted additively homomorphically,
//! partitioned with hashed identifiers, or cut by byte distribution and
//! Shamir-shared across providers with challenge tokens for audits.
//!
//! The building blocks are usable on their own:
//!
//! * [`field`]: GF(2^8) and small prime fields.
//! * [`shamir`]: `(k, n)` threshold sharing.
//! * [`entropy_split`]: distribution-aware chunking and order hiding.
//! * [`integrity`]: parity columns and precomputed challenge tokens.
//! * [`homomorphic`]: Paillier encryption.
//! * [`anonymize`]: identifier digests and column groups.
//! * [`ranking`]: provider scores and breach probability.
//! * [`simcloud`]: simulated providers with fault injection.
//! * [`persistence`]: checksummed append-only manifest and keystore.
//! * [`policy`], [`scenario`], [`cli`]: configuration and operator tools.

pub mod anonymize;
pub mod cli;
pub mod entropy_split;
pub mod field;
pub mod homomorphic;
pub mod integrity;
pub mod persistence;
pub mod policy;
pub mod ranking;
pub mod router;
pub mod scenario;
pub mod shamir;
pub mod simcloud;
