//! Entropy coding of quantized feature maps and the image-level
//! compress/decompress pipeline.
//!
//! The per-image symbol distribution is fitted on the image's own symbols,
//! scaled to 16-bit counts and stored in the header, so the decoder needs
//! nothing beyond the file and the checkpoint named by its model id.

pub mod arith;
pub mod bitstream;

use std::path::Path;

pub use arith::{decode_symbols, encode_symbols, ArithmeticDecoder, ArithmeticEncoder, FrequencyTable};
pub use bitstream::{scaled_counts, BitstreamHeader, CompressedImage, EXTENSION, MAGIC, VERSION};

use crate::autoencoder::{decode_forward, encode_forward};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::quantizer::{dequantize, quantize, QuantizedMap};
use crate::rate_model::{fit_distribution, SymbolDistribution, DEFAULT_EPSILON};

fn table(counts: &[u16]) -> Result<FrequencyTable> {
    let wide: Vec<u32> = counts.iter().map(|&c| c as u32).collect();
    FrequencyTable::new(&wide)
}

/// Codes `qmap` under the 16-bit scaling of `dist`.
pub fn entropy_encode(qmap: &QuantizedMap, dist: &SymbolDistribution) -> Result<Vec<u8>> {
    if dist.bits() != qmap.bits() {
        return Err(Error::Distribution(format!(
            "{}-bit distribution for a {}-bit map",
            dist.bits(),
            qmap.bits()
        )));
    }
    entropy_encode_counts(qmap, &scaled_counts(dist))
}

/// Codes `qmap` under explicit header counts.
pub fn entropy_encode_counts(qmap: &QuantizedMap, counts: &[u16]) -> Result<Vec<u8>> {
    if counts.len() != qmap.alphabet_size() {
        return Err(Error::Distribution(format!(
            "{} counts for a {}-symbol alphabet",
            counts.len(),
            qmap.alphabet_size()
        )));
    }
    encode_symbols(qmap.symbols().iter().map(|&s| s as usize), &table(counts)?)
}

/// Exact inverse of [`entropy_encode`] for the map shape described by
/// `header`. A payload that does not re-encode to itself is rejected.
pub fn entropy_decode(payload: &[u8], header: &BitstreamHeader) -> Result<QuantizedMap> {
    header.validate()?;
    let table = table(&header.counts)?;
    let (c, h, w) = header.fmap_dims();
    let symbols = decode_symbols(payload, &table, c * h * w)?;
    if encode_symbols(symbols.iter().copied(), &table)? != payload {
        return Err(Error::Corrupt("payload does not match its decoded symbols".into()));
    }
    QuantizedMap::new(header.bits, c, h, w, symbols.into_iter().map(|s| s as u16).collect())
}

/// Header for a bare feature map with no spatial reduction, so that the
/// map dimensions are the header dimensions.
pub fn map_header(qmap: &QuantizedMap, counts: Vec<u16>, model_id: u8) -> Result<BitstreamHeader> {
    let dim = |v: usize, what: &str| u16::try_from(v).map_err(|_| Error::Shape(format!("{what} {v} exceeds 65535")));
    let header = BitstreamHeader {
        version: VERSION,
        width: dim(qmap.width(), "width")?,
        height: dim(qmap.height(), "height")?,
        model_id,
        channels: u8::try_from(qmap.channels()).map_err(|_| Error::Shape(format!("{} channels exceed 255", qmap.channels())))?,
        bits: qmap.bits(),
        stages: 0,
        counts,
    };
    header.validate()?;
    Ok(header)
}

fn quantized_latent(image: &Image, ckpt: &Checkpoint) -> Result<QuantizedMap> {
    let padded = image.reflect_pad_to(ckpt.model.reduction());
    quantize(&encode_forward(&padded, &ckpt.model.encoder)?, ckpt.model.quant_bits())
}

/// Pads, encodes, quantizes and entropy-codes `image` with `ckpt`.
pub fn compress_image(image: &Image, ckpt: &Checkpoint) -> Result<CompressedImage> {
    let too_big = |v: usize| Error::Shape(format!("image side {v} exceeds 65535"));
    let width = u16::try_from(image.width()).map_err(|_| too_big(image.width()))?;
    let height = u16::try_from(image.height()).map_err(|_| too_big(image.height()))?;
    let qmap = quantized_latent(image, ckpt)?;
    let counts = scaled_counts(&fit_distribution(std::slice::from_ref(&qmap), DEFAULT_EPSILON)?);
    let payload = entropy_encode_counts(&qmap, &counts)?;
    let spec = &ckpt.model.spec().encoder;
    let header = BitstreamHeader {
        version: VERSION,
        width,
        height,
        model_id: ckpt.model_id,
        channels: spec.bottleneck_channels as u8,
        bits: ckpt.model.quant_bits(),
        stages: spec.downsample_stages as u8,
        counts,
    };
    Ok(CompressedImage { header, payload })
}

/// Decodes `cs` with the checkpoint it names and crops to the true size.
pub fn decompress_image(cs: &CompressedImage, ckpt: &Checkpoint) -> Result<Image> {
    let h = &cs.header;
    let spec = &ckpt.model.spec().encoder;
    if h.model_id != ckpt.model_id {
        return Err(Error::ModelMismatch(format!(
            "stream was coded with model {}, checkpoint is model {}",
            h.model_id, ckpt.model_id
        )));
    }
    if h.channels as usize != spec.bottleneck_channels
        || h.bits != ckpt.model.quant_bits()
        || h.stages as usize != spec.downsample_stages
    {
        return Err(Error::ModelMismatch(format!(
            "stream has C={}, Q={}, {} stages; model {} has C={}, Q={}, {} stages",
            h.channels,
            h.bits,
            h.stages,
            ckpt.model_id,
            spec.bottleneck_channels,
            ckpt.model.quant_bits(),
            spec.downsample_stages
        )));
    }
    let qmap = entropy_decode(&cs.payload, h)?;
    let full = decode_forward(&dequantize(&qmap), &ckpt.model.decoder)?;
    full.crop(h.height as usize, h.width as usize)
}

/// The decoder output `decompress_image` would produce, computed without
/// entropy coding.
pub fn reconstruct(image: &Image, ckpt: &Checkpoint) -> Result<Image> {
    let qmap = quantized_latent(image, ckpt)?;
    decode_forward(&dequantize(&qmap), &ckpt.model.decoder)?.crop(image.height(), image.width())
}

impl CompressedImage {
    /// Bits per pixel of the whole file, header included.
    pub fn bpp(&self) -> f64 {
        8.0 * self.file_len() as f64 / (self.header.width as f64 * self.header.height as f64)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
