//! Trainable parameter counts of the reference backbones, enumerated layer by
//! layer from their published architectures (convolutions without bias,
//! batch-norm contributing trainable scale and offset per channel; the
//! running statistics are not trainable).

/// Per-layer tally.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ParamTally {
    pub trainable: usize,
    pub non_trainable: usize,
}

impl ParamTally {
    fn conv(&mut self, k: usize, cin: usize, cout: usize, bias: bool) {
        self.trainable += k * k * cin * cout + if bias { cout } else { 0 };
    }

    fn depthwise(&mut self, k: usize, channels: usize) {
        self.trainable += k * k * channels;
    }

    fn batch_norm(&mut self, channels: usize) {
        self.trainable += 2 * channels;
        self.non_trainable += 2 * channels;
    }

    pub fn total(&self) -> usize {
        self.trainable + self.non_trainable
    }
}

/// MobileNet v1, width multiplier 1, without the classifier top.
pub fn mobilenet_v1() -> ParamTally {
    let mut t = ParamTally::default();
    t.conv(3, 3, 32, false);
    t.batch_norm(32);
    let mut blocks = vec![(32, 64), (64, 128), (128, 128), (128, 256), (256, 256), (256, 512)];
    blocks.extend(std::iter::repeat_n((512, 512), 5));
    blocks.extend([(512, 1024), (1024, 1024)]);
    for (cin, cout) in blocks {
        t.depthwise(3, cin);
        t.batch_norm(cin);
        t.conv(1, cin, cout, false);
        t.batch_norm(cout);
    }
    t
}

/// DenseNet-121 (growth 32, blocks 6/12/24/16, compression 0.5), no top.
pub fn densenet121() -> ParamTally {
    const GROWTH: usize = 32;
    let mut t = ParamTally::default();
    t.conv(7, 3, 64, false);
    t.batch_norm(64);
    let mut channels = 64;
    let blocks = [6, 12, 24, 16];
    for (i, &layers) in blocks.iter().enumerate() {
        for _ in 0..layers {
            t.batch_norm(channels);
            t.conv(1, channels, 4 * GROWTH, false);
            t.batch_norm(4 * GROWTH);
            t.conv(3, 4 * GROWTH, GROWTH, false);
            channels += GROWTH;
        }
        if i + 1 < blocks.len() {
            t.batch_norm(channels);
            t.conv(1, channels, channels / 2, false);
            channels /= 2;
        }
    }
    t.batch_norm(channels);
    t
}

/// EfficientNet-B0 without the classifier top, including the input
/// normalization layer's (non-trainable) statistics.
pub fn efficientnet_b0() -> ParamTally {
    // (kernel, repeats, in, out, expand)
    const STAGES: [(usize, usize, usize, usize, usize); 7] = [
        (3, 1, 32, 16, 1),
        (3, 2, 16, 24, 6),
        (5, 2, 24, 40, 6),
        (3, 3, 40, 80, 6),
        (5, 3, 80, 112, 6),
        (5, 4, 112, 192, 6),
        (3, 1, 192, 320, 6),
    ];
    let mut t = ParamTally::default();
    // mean, variance, count
    t.non_trainable += 3 + 3 + 1;
    t.conv(3, 3, 32, false);
    t.batch_norm(32);
    for (kernel, repeats, stage_in, out, expand) in STAGES {
        for r in 0..repeats {
            let cin = if r == 0 { stage_in } else { out };
            let filters = cin * expand;
            if expand != 1 {
                t.conv(1, cin, filters, false);
                t.batch_norm(filters);
            }
            t.depthwise(kernel, filters);
            t.batch_norm(filters);
            let squeezed = (cin / 4).max(1);
            t.conv(1, filters, squeezed, true);
            t.conv(1, squeezed, filters, true);
            t.conv(1, filters, out, false);
            t.batch_norm(out);
        }
    }
    t.conv(1, 320, 1280, false);
    t.batch_norm(1280);
    t
}

/// NASNet-Mobile is not enumerated here; these are the counts of the
/// standard ImageNet release without the top.
pub fn nasnet_mobile() -> ParamTally {
    ParamTally {
        trainable: 4_232_978,
        non_trainable: 36_738,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_release_counts() {
        assert_eq!(mobilenet_v1().trainable, 3_206_976);
        assert_eq!(mobilenet_v1().total(), 3_228_864);
        assert_eq!(densenet121().trainable, 6_953_856);
        assert_eq!(densenet121().total(), 7_037_504);
        assert_eq!(efficientnet_b0().trainable, 4_007_548);
        assert_eq!(efficientnet_b0().total(), 4_049_571);
        assert_eq!(nasnet_mobile().total(), 4_269_716);
    }
}
