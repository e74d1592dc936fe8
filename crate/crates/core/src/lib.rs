//! Private aggregation of Count-Min and Count Sketch tables.
//!
//! Users blind their tables with pairwise masks that cancel in the sum
//! ([`zerosum`]); reporters encrypt Count Sketches under threshold EC-ElGamal so
//! authorities can search for a median one decrypted range count at a time
//! ([`ahe`], [`median`]). [`analytics`] turns aggregates into item
//! recommendations and heat-map forecasts, and [`harness`] runs the whole
//! pipeline on synthetic data.

pub mod sketch;
pub mod group_crypto;
pub mod zerosum;
pub mod ahe;
pub mod median;
pub mod analytics;
pub mod harness;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/sketches.md")]
    mod sketches {}
    #[doc = include_str!("../../../book/src/blinding.md")]
    mod blinding {}
    #[doc = include_str!("../../../book/src/median.md")]
    mod median {}
    #[doc = include_str!("../../../book/src/privacy.md")]
    mod privacy {}
    #[doc = include_str!("../../../book/src/analytics.md")]
    mod analytics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
