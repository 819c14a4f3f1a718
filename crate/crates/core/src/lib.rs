//! Semantically structured image coding.
//!
//! An image is split into grounded objects plus a background, objects are
//! ranked into three importance levels, and each region is coded as an
//! independent unit of an importance-ordered bitstream. Any prefix that
//! ends on a unit boundary decodes, so dropping the tail of the stream
//! drops the least important content first.
//!
//! ```no_run
//! use sdcomp::{container, pipeline, priors};
//!
//! let img = sdcomp::image::load_ppm(&std::fs::read("a.ppm")?)?;
//! let p = priors::parse_priors(&std::fs::read_to_string("a.json")?)?;
//! let ranking = priors::heuristic_rank(&p)?;
//! let stream = pipeline::encode_image(&img, &p, &ranking, &Default::default())?;
//! let l1_only = container::truncate(&stream, container::LevelCode::L1)?;
//! let preview = pipeline::decode_image(&l1_only, pipeline::LevelFilter::ALL)?;
//! # let _ = preview;
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod bits;
pub mod container;
pub mod eval;
pub mod image;
pub mod pipeline;
pub mod priors;
pub mod prompting;
pub mod regioncodec;

pub use container::{LevelCode, Manifest, RegionUnit, StructuredBitstream};
pub use eval::{bd_rate, psnr, RdCurve, RdPoint, RdRow};
pub use image::{Image, Rect};
pub use pipeline::{LevelFilter, QualityProfile};
pub use priors::{Captions, GroundedObject, ImportanceLevel, Mask, Ranking, SemanticPriors};
pub use regioncodec::QualityIndex;
