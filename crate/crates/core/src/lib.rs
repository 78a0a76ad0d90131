//! Invisible bit-string watermarking for face-scale images and tools for
//! measuring how watermarking affects embedding-based face verification.
//!
//! * [`tensorgrad`]: tensors, reverse-mode differentiation, Adam.
//! * [`msgcodec`]: watermark messages and signature bitmaps.
//! * [`imageops`]: PPM I/O and the transformation suite (crop, resize,
//!   brightness, contrast, JPEG-style quantisation).
//! * [`watermarknet`]: the encoder/decoder networks.
//! * [`bioeval`]: cosine scoring, TAR@FAR, EER, Welch's t-test, toy embedder.
//! * [`pipeline`]: training, dataset watermarking, sweeps, verification, CLI.

pub mod tensorgrad;
pub mod imageops;
pub mod msgcodec;
pub mod bioeval;
pub mod watermarknet;
pub mod weights;
pub mod pipeline;
