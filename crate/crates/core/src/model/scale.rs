//! Architecture dimensions and the derived layer table.

use std::fmt;

use crate::error::{Error, Result};

/// Number of glance classes.
pub const N_CLASSES: usize = 6;

/// Size knobs for the hourglass.
///
/// Encoder block `i` has `base_channels << i` filters, the stem has twice the
/// base width, and the decoder mirrors the encoder back up to full resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ArchitectureScale {
    pub input_size: usize,
    pub input_channels: usize,
    pub n_blocks: usize,
    pub base_channels: usize,
    pub embedding_dim: usize,
    pub n_classes: usize,
}

impl ArchitectureScale {
    /// 96x96x2 input, five blocks, 64..1024 filters, 512-d embedding.
    pub const fn full() -> Self {
        Self {
            input_size: 96,
            input_channels: 2,
            n_blocks: 5,
            base_channels: 64,
            embedding_dim: 512,
            n_classes: N_CLASSES,
        }
    }

    /// Laptop-scale preset: 32x32 input, three blocks, 128-d embedding.
    pub const fn desk() -> Self {
        Self {
            input_size: 32,
            input_channels: 2,
            n_blocks: 3,
            base_channels: 4,
            embedding_dim: 128,
            n_classes: N_CLASSES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_blocks == 0 || self.base_channels == 0 || self.embedding_dim == 0 || self.input_channels == 0 {
            return fail(format!("architecture sizes must be positive: {self:?}"));
        }
        if self.n_classes < 2 {
            return fail(format!("need at least two classes, got {}", self.n_classes));
        }
        if self.n_blocks >= usize::BITS as usize || self.input_size % (1usize << self.n_blocks) != 0 {
            return fail(format!(
                "input size {} is not divisible by 2^{}",
                self.input_size, self.n_blocks
            ));
        }
        if self.embedding_dim < 2 {
            return fail("embedding_dim must be at least 2".into());
        }
        Ok(())
    }

    pub fn stem_channels(&self) -> usize {
        2 * self.base_channels
    }

    pub fn block_width(&self, block: usize) -> usize {
        self.base_channels << block
    }

    /// Spatial side length after all downsampling blocks.
    pub fn top_size(&self) -> usize {
        self.input_size >> self.n_blocks
    }

    pub fn top_width(&self) -> usize {
        self.block_width(self.n_blocks - 1)
    }

    /// Channels leaving pixel-shuffle stage `i` (the conv before it emits four times this).
    pub fn decoder_width(&self, stage: usize) -> usize {
        if stage + 1 < self.n_blocks {
            self.block_width(self.n_blocks - 2 - stage)
        } else {
            self.base_channels
        }
    }

    pub fn head_hidden(&self) -> usize {
        self.embedding_dim / 2
    }

    /// Channels of the encoder feature map at decoder stage `i`'s input resolution.
    ///
    /// Stage 0 sees the deepest block output; the final output conv sees the stem.
    pub fn skip_width(&self, stage: usize) -> usize {
        if stage < self.n_blocks {
            self.block_width(self.n_blocks - 1 - stage)
        } else {
            self.stem_channels()
        }
    }

    /// Layer-by-layer description of encoder, decoder and prediction head.
    pub fn layer_table(&self, skip: bool) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let s = self.input_size;
        let cin = self.input_channels;
        let conv = |name: String, part: Part, k: usize, stride: usize, dilation: usize, cin: usize, cout: usize, out: [usize; 3]| {
            LayerSpec {
                name,
                part,
                kind: LayerKind::Conv { kernel: k, stride, dilation, filters: cout },
                output: out.to_vec(),
                params: k * k * cin * cout + cout,
            }
        };

        let stem = self.stem_channels();
        layers.push(conv("conv1".into(), Part::Encoder, 3, 1, 2, cin, stem, [s, s, stem]));
        let mut prev = stem;
        let mut size = s;
        for b in 0..self.n_blocks {
            size /= 2;
            let w = self.block_width(b);
            layers.push(conv(format!("conv{}", b + 2), Part::Encoder, 3, 2, 1, prev, w, [size, size, w]));
            layers.push(LayerSpec {
                name: format!("RB{}", b + 1),
                part: Part::Encoder,
                kind: LayerKind::Residual { kernel: 3, filters: w },
                output: vec![size, size, w],
                params: 2 * (9 * w * w + w),
            });
            prev = w;
        }
        let flat = size * size * prev;
        layers.push(LayerSpec {
            name: "fc1".into(),
            part: Part::Encoder,
            kind: LayerKind::Dense { units: self.embedding_dim },
            output: vec![self.embedding_dim],
            params: flat * self.embedding_dim + self.embedding_dim,
        });

        let top = self.top_size();
        let top_flat = top * top * self.top_width();
        layers.push(LayerSpec {
            name: format!("fc{}", 2),
            part: Part::Decoder,
            kind: LayerKind::Dense { units: top_flat },
            output: vec![top_flat],
            params: self.embedding_dim * top_flat + top_flat,
        });
        let mut chans = self.top_width();
        let mut size = top;
        let conv_base = self.n_blocks + 2;
        for stage in 0..self.n_blocks {
            let inc = chans + if skip { self.skip_width(stage) } else { 0 };
            let out = 4 * self.decoder_width(stage);
            layers.push(conv(format!("conv{}", conv_base + stage), Part::Decoder, 3, 1, 1, inc, out, [size, size, out]));
            size *= 2;
            chans = self.decoder_width(stage);
            layers.push(LayerSpec {
                name: format!("PS{}", stage + 1),
                part: Part::Decoder,
                kind: LayerKind::PixelShuffle,
                output: vec![size, size, chans],
                params: 0,
            });
        }
        let inc = chans + if skip { self.skip_width(self.n_blocks) } else { 0 };
        layers.push(conv(
            format!("conv{}", conv_base + self.n_blocks),
            Part::Decoder,
            5,
            1,
            1,
            inc,
            self.input_channels,
            [s, s, self.input_channels],
        ));

        let fc_base = 3;
        layers.push(LayerSpec {
            name: format!("fc{fc_base}"),
            part: Part::Head,
            kind: LayerKind::Dense { units: self.head_hidden() },
            output: vec![self.head_hidden()],
            params: self.embedding_dim * self.head_hidden() + self.head_hidden(),
        });
        layers.push(LayerSpec {
            name: format!("fc{}", fc_base + 1),
            part: Part::Head,
            kind: LayerKind::Dense { units: self.n_classes },
            output: vec![self.n_classes],
            params: self.head_hidden() * self.n_classes + self.n_classes,
        });
        layers
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Encoder,
    Decoder,
    Head,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv { kernel: usize, stride: usize, dilation: usize, filters: usize },
    Residual { kernel: usize, filters: usize },
    Dense { units: usize },
    PixelShuffle,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub part: Part,
    pub kind: LayerKind,
    /// Per-sample output shape (`[h, w, c]` or `[units]`).
    pub output: Vec<usize>,
    pub params: usize,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let desc = match self.kind {
            LayerKind::Conv { kernel, stride, dilation, filters } => {
                format!("{kernel}x{kernel}/{stride}/{dilation}  {filters}")
            }
            LayerKind::Residual { kernel, filters } => format!("{kernel}x{kernel}/1/1  {filters}"),
            LayerKind::Dense { units } => format!("{units}"),
            LayerKind::PixelShuffle => "-".to_string(),
        };
        write!(f, "{:<8} {:<20} out={:?} params={}", self.name, desc, self.output, self.params)
    }
}
