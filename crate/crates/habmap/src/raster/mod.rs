//! Raster data model: multi-channel georeferenced grids, per-channel
//! standardization, derived NDVI channels, and patch extraction around
//! annotated points.
//!
//! A [`RasterStack`] stores `C` channels of `H x W` float samples in
//! channel-major order together with a north-up [`GeoTransform`] and a
//! nodata sentinel. Stacks are immutable after construction and safe to
//! share read-only across parallel workers.

mod container;

pub use container::{read_container, read_text_matrix, write_container, CONTAINER_MAGIC};

use thiserror::Error;

/// Standard deviations are clamped below at this floor so constant channels
/// never divide by zero during standardization.
pub const STD_FLOOR: f64 = 1e-6;

/// NDVI denominators with magnitude below this read as "no vegetation
/// signal" and yield 0.
pub const NDVI_DENOM_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster has no samples")]
    Empty,
    #[error("channel {channel} ({name}) contains only nodata samples")]
    AllNodataChannel { channel: usize, name: String },
    #[error("channel count mismatch: raster has {raster}, stats have {stats}")]
    ChannelCountMismatch { raster: usize, stats: usize },
    #[error("data length {got} does not match channels*height*width = {expected}")]
    DataLengthMismatch { got: usize, expected: usize },
    #[error("channel_names length {got} does not match channel count {expected}")]
    ChannelNamesMismatch { got: usize, expected: usize },
    #[error("pixel sizes must be strictly positive, got ({x}, {y})")]
    NonPositivePixelSize { x: f64, y: f64 },
    #[error("NDVI series is empty")]
    EmptySeries,
    #[error("series raster {index} has shape {got:?}, expected {expected:?}")]
    SeriesShapeMismatch {
        index: usize,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("patch size {size} must be odd and >= 1")]
    BadPatchSize { size: usize },
    #[error("patch center ({row}, {col}) is outside the raster")]
    CenterOutOfBounds { row: i64, col: i64 },
    #[error("patch center ({row}, {col}) is nodata; the label pixel must be observed")]
    CenterNodata { row: usize, col: usize },
    #[error("container: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// North-up affine georeferencing: world x/y of the upper-left corner of
/// pixel (0, 0) plus strictly positive pixel sizes in meters. The y pixel
/// size is applied southward (rows grow toward smaller world y).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size_x: f64,
    pub pixel_size_y: f64,
}

impl GeoTransform {
    pub fn new(
        origin_x: f64,
        origin_y: f64,
        pixel_size_x: f64,
        pixel_size_y: f64,
    ) -> Result<Self, RasterError> {
        if !(pixel_size_x > 0.0 && pixel_size_y > 0.0) {
            return Err(RasterError::NonPositivePixelSize {
                x: pixel_size_x,
                y: pixel_size_y,
            });
        }
        Ok(Self {
            origin_x,
            origin_y,
            pixel_size_x,
            pixel_size_y,
        })
    }

    /// Unit transform: origin (0, 0), 1 m pixels. Handy for tests and
    /// synthetic data.
    pub fn unit() -> Self {
        Self {
            origin_x: 0.0,
            origin_y: 0.0,
            pixel_size_x: 1.0,
            pixel_size_y: 1.0,
        }
    }

    /// Map world coordinates to the (row, col) of the containing cell.
    /// Results may be negative or past the raster edge; callers bound-check.
    pub fn world_to_pixel(&self, x: f64, y: f64) -> (i64, i64) {
        let col = ((x - self.origin_x) / self.pixel_size_x).floor() as i64;
        let row = ((self.origin_y - y) / self.pixel_size_y).floor() as i64;
        (row, col)
    }

    /// World coordinates of the center of cell (row, col).
    pub fn pixel_center_to_world(&self, row: i64, col: i64) -> (f64, f64) {
        let x = self.origin_x + (col as f64 + 0.5) * self.pixel_size_x;
        let y = self.origin_y - (row as f64 + 0.5) * self.pixel_size_y;
        (x, y)
    }
}

/// Map world coordinates to a cell of the shared grid anchored at world
/// origin (0, 0) with square pixels of `pixel_size` meters. Used when two
/// points must be compared on one grid without a raster at hand.
pub fn shared_grid_pixel(x: f64, y: f64, pixel_size: f64) -> (i64, i64) {
    let col = (x / pixel_size).floor() as i64;
    let row = (-y / pixel_size).floor() as i64;
    (row, col)
}

/// Multi-channel georeferenced grid of float samples, channel-major.
#[derive(Debug, Clone)]
pub struct RasterStack {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
    geotransform: GeoTransform,
    nodata: f32,
    channel_names: Vec<String>,
    standardized: bool,
    /// Per-pixel validity lost to standardization: true where any channel
    /// was nodata before the nodata samples were rewritten to 0.
    nodata_mask: Option<Vec<bool>>,
}

impl RasterStack {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
        geotransform: GeoTransform,
        nodata: f32,
        channel_names: Vec<String>,
    ) -> Result<Self, RasterError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(RasterError::Empty);
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(RasterError::DataLengthMismatch {
                got: data.len(),
                expected,
            });
        }
        if channel_names.len() != channels {
            return Err(RasterError::ChannelNamesMismatch {
                got: channel_names.len(),
                expected: channels,
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
            geotransform,
            nodata,
            channel_names,
            standardized: false,
            nodata_mask: None,
        })
    }

    /// Stack filled with a constant value; channel names are generated.
    pub fn filled(
        channels: usize,
        height: usize,
        width: usize,
        value: f32,
        geotransform: GeoTransform,
        nodata: f32,
    ) -> Self {
        let names = (0..channels).map(|c| format!("ch{c:02}")).collect();
        Self::new(
            channels,
            height,
            width,
            vec![value; channels * height * width],
            geotransform,
            nodata,
            names,
        )
        .expect("constant stack dimensions are valid")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn geotransform(&self) -> &GeoTransform {
        &self.geotransform
    }
    pub fn nodata(&self) -> f32 {
        self.nodata
    }
    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Mark a stack as already standardized. Standardization state is
    /// process metadata; the container format does not carry it, so stages
    /// that load a standardized container restore the flag from provenance.
    pub fn mark_standardized(&mut self) {
        self.standardized = true;
    }

    #[inline]
    pub fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.height + row) * self.width + col
    }

    #[inline]
    pub fn value(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[self.index(channel, row, col)]
    }

    #[inline]
    pub fn in_bounds(&self, row: i64, col: i64) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    #[inline]
    fn matches_sentinel(&self, v: f32) -> bool {
        if self.nodata.is_nan() {
            v.is_nan()
        } else {
            v == self.nodata
        }
    }

    /// Whether one sample is nodata, via the sentinel or the mask kept by
    /// standardization.
    #[inline]
    pub fn sample_is_nodata(&self, channel: usize, row: usize, col: usize) -> bool {
        if let Some(mask) = &self.nodata_mask {
            if mask[row * self.width + col] {
                return true;
            }
        }
        self.matches_sentinel(self.value(channel, row, col))
    }

    /// Whether any channel at (row, col) is nodata.
    pub fn pixel_is_nodata(&self, row: usize, col: usize) -> bool {
        if let Some(mask) = &self.nodata_mask {
            if mask[row * self.width + col] {
                return true;
            }
        }
        (0..self.channels).any(|c| self.matches_sentinel(self.value(c, row, col)))
    }

    /// Feature vector for pixel-based classification: the C channel values
    /// at one pixel.
    pub fn pixel_features(&self, row: usize, col: usize) -> Vec<f32> {
        (0..self.channels).map(|c| self.value(c, row, col)).collect()
    }

    /// Shape as (height, width).
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Per-channel mean and standard deviation over the full raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl ChannelStats {
    pub fn new(means: Vec<f64>, stds: Vec<f64>) -> Self {
        assert_eq!(means.len(), stds.len());
        let stds = stds.into_iter().map(|s| s.max(STD_FLOOR)).collect();
        Self { means, stds }
    }
    pub fn channels(&self) -> usize {
        self.means.len()
    }
    pub fn mean(&self, channel: usize) -> f64 {
        self.means[channel]
    }
    pub fn std(&self, channel: usize) -> f64 {
        self.stds[channel]
    }
    pub fn means(&self) -> &[f64] {
        &self.means
    }
    pub fn stds(&self) -> &[f64] {
        &self.stds
    }
}

/// Per-channel mean and population standard deviation over all non-nodata
/// samples, with the std clamped below at [`STD_FLOOR`].
pub fn compute_channel_stats(raster: &RasterStack) -> Result<ChannelStats, RasterError> {
    let mut means = Vec::with_capacity(raster.channels());
    let mut stds = Vec::with_capacity(raster.channels());
    for c in 0..raster.channels() {
        let mut sum = 0.0f64;
        let mut count = 0u64;
        for row in 0..raster.height() {
            for col in 0..raster.width() {
                if !raster.sample_is_nodata(c, row, col) {
                    sum += raster.value(c, row, col) as f64;
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(RasterError::AllNodataChannel {
                channel: c,
                name: raster.channel_names()[c].clone(),
            });
        }
        let mean = sum / count as f64;
        let mut sq = 0.0f64;
        for row in 0..raster.height() {
            for col in 0..raster.width() {
                if !raster.sample_is_nodata(c, row, col) {
                    let d = raster.value(c, row, col) as f64 - mean;
                    sq += d * d;
                }
            }
        }
        let std = (sq / count as f64).sqrt().max(STD_FLOOR);
        means.push(mean);
        stds.push(std);
    }
    Ok(ChannelStats { means, stds })
}

/// Replace each non-nodata sample with `(v - mean) / std`; nodata samples
/// become 0, the post-standardization mean, and are remembered in the
/// output's validity mask. The result is flagged as standardized.
pub fn standardize(raster: &RasterStack, stats: &ChannelStats) -> Result<RasterStack, RasterError> {
    if stats.channels() != raster.channels() {
        return Err(RasterError::ChannelCountMismatch {
            raster: raster.channels(),
            stats: stats.channels(),
        });
    }
    let mut out = raster.clone();
    let mut mask = vec![false; raster.height() * raster.width()];
    for c in 0..raster.channels() {
        let mean = stats.mean(c);
        let std = stats.std(c);
        for row in 0..raster.height() {
            for col in 0..raster.width() {
                let i = raster.index(c, row, col);
                if raster.sample_is_nodata(c, row, col) {
                    out.data[i] = 0.0;
                    mask[row * raster.width() + col] = true;
                } else {
                    out.data[i] = ((raster.data[i] as f64 - mean) / std) as f32;
                }
            }
        }
    }
    out.standardized = true;
    out.nodata_mask = Some(mask);
    Ok(out)
}

/// Normalized difference vegetation index. Degenerate denominators
/// (|nir + red| below [`NDVI_DENOM_EPS`]) read as "no vegetation signal"
/// and yield 0.
pub fn ndvi(nir: f64, red: f64) -> f64 {
    let denom = nir + red;
    if denom.abs() < NDVI_DENOM_EPS {
        0.0
    } else {
        (nir - red) / denom
    }
}

/// Per-pixel NDVI raster from the NIR and red channels of one stack.
/// A pixel that is nodata in either source channel is nodata in the output.
pub fn ndvi_raster(
    stack: &RasterStack,
    nir_channel: usize,
    red_channel: usize,
) -> Result<RasterStack, RasterError> {
    let (h, w) = stack.shape();
    let nodata = stack.nodata();
    let mut data = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let bad = stack.sample_is_nodata(nir_channel, row, col)
                || stack.sample_is_nodata(red_channel, row, col);
            if bad {
                data.push(nodata);
            } else {
                let nir = stack.value(nir_channel, row, col) as f64;
                let red = stack.value(red_channel, row, col) as f64;
                data.push(ndvi(nir, red) as f32);
            }
        }
    }
    RasterStack::new(
        1,
        h,
        w,
        data,
        *stack.geotransform(),
        nodata,
        vec!["ndvi".to_string()],
    )
}

/// Seasonal NDVI aggregates over an ordered series of single-channel NDVI
/// rasters: per-pixel amplitude (max - min), sum, and maximum. A nodata
/// sample at a pixel excludes that time step for that pixel; a pixel with
/// no valid step is nodata in all three outputs.
pub fn ndvi_aggregates(
    series: &[RasterStack],
) -> Result<(RasterStack, RasterStack, RasterStack), RasterError> {
    let first = series.first().ok_or(RasterError::EmptySeries)?;
    let (h, w) = first.shape();
    for (i, r) in series.iter().enumerate() {
        if r.shape() != (h, w) || r.channels() != 1 {
            return Err(RasterError::SeriesShapeMismatch {
                index: i,
                got: r.shape(),
                expected: (h, w),
            });
        }
    }
    let nodata = first.nodata();
    let mut amp = vec![nodata; h * w];
    let mut sum = vec![nodata; h * w];
    let mut max = vec![nodata; h * w];
    for row in 0..h {
        for col in 0..w {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let mut acc = 0.0f64;
            let mut seen = false;
            for r in series {
                if r.sample_is_nodata(0, row, col) {
                    continue;
                }
                let v = r.value(0, row, col) as f64;
                lo = lo.min(v);
                hi = hi.max(v);
                acc += v;
                seen = true;
            }
            if seen {
                let i = row * w + col;
                amp[i] = (hi - lo) as f32;
                sum[i] = acc as f32;
                max[i] = hi as f32;
            }
        }
    }
    let gt = *first.geotransform();
    let build = |name: &str, data: Vec<f32>| {
        RasterStack::new(1, h, w, data, gt, nodata, vec![name.to_string()])
    };
    Ok((
        build("ndvi_amplitude", amp)?,
        build("ndvi_sum", sum)?,
        build("ndvi_max", max)?,
    ))
}

/// Square window of raster samples centered on one annotated pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    channels: usize,
    size: usize,
    values: Vec<f32>,
    pub center_class: Option<usize>,
    pub source_point: Option<String>,
    nodata_fraction: f32,
}

impl Patch {
    pub fn new(
        channels: usize,
        size: usize,
        values: Vec<f32>,
        nodata_fraction: f32,
    ) -> Result<Self, RasterError> {
        if size % 2 == 0 || size == 0 {
            return Err(RasterError::BadPatchSize { size });
        }
        let expected = channels * size * size;
        if values.len() != expected {
            return Err(RasterError::DataLengthMismatch {
                got: values.len(),
                expected,
            });
        }
        Ok(Self {
            channels,
            size,
            values,
            center_class: None,
            source_point: None,
            nodata_fraction,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn size(&self) -> usize {
        self.size
    }
    pub fn values(&self) -> &[f32] {
        &self.values
    }
    pub fn nodata_fraction(&self) -> f32 {
        self.nodata_fraction
    }

    #[inline]
    pub fn value(&self, channel: usize, i: usize, j: usize) -> f32 {
        self.values[(channel * self.size + i) * self.size + j]
    }

    /// Value of the center pixel in one channel.
    pub fn center_value(&self, channel: usize) -> f32 {
        let c = (self.size - 1) / 2;
        self.value(channel, c, c)
    }

    /// The C channel values at the center pixel (the pixel-based feature
    /// vector of this patch).
    pub fn center_features(&self) -> Vec<f32> {
        (0..self.channels).map(|c| self.center_value(c)).collect()
    }

    pub(crate) fn from_parts_unchecked(
        channels: usize,
        size: usize,
        values: Vec<f32>,
        nodata_fraction: f32,
    ) -> Self {
        Self {
            channels,
            size,
            values,
            center_class: None,
            source_point: None,
            nodata_fraction,
        }
    }
}

/// Extract the `size x size` patch centered at (row, col). Pixels outside
/// the raster and nodata pixels are filled with 0 (the standardized-space
/// mean) and counted into `nodata_fraction`. The center pixel itself must
/// be in bounds and observed in every channel.
pub fn extract_patch(
    raster: &RasterStack,
    row: i64,
    col: i64,
    size: usize,
) -> Result<Patch, RasterError> {
    if size % 2 == 0 || size == 0 {
        return Err(RasterError::BadPatchSize { size });
    }
    if !raster.in_bounds(row, col) {
        return Err(RasterError::CenterOutOfBounds { row, col });
    }
    let (crow, ccol) = (row as usize, col as usize);
    if raster.pixel_is_nodata(crow, ccol) {
        return Err(RasterError::CenterNodata {
            row: crow,
            col: ccol,
        });
    }
    let half = (size as i64 - 1) / 2;
    let mut values = vec![0.0f32; raster.channels() * size * size];
    let mut filled = 0usize;
    for c in 0..raster.channels() {
        for i in 0..size {
            for j in 0..size {
                let rr = row - half + i as i64;
                let cc = col - half + j as i64;
                let dst = (c * size + i) * size + j;
                if raster.in_bounds(rr, cc)
                    && !raster.sample_is_nodata(c, rr as usize, cc as usize)
                {
                    values[dst] = raster.value(c, rr as usize, cc as usize);
                } else {
                    filled += 1;
                }
            }
        }
    }
    let total = raster.channels() * size * size;
    Ok(Patch {
        channels: raster.channels(),
        size,
        values,
        center_class: None,
        source_point: None,
        nodata_fraction: filled as f32 / total as f32,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack_1ch(values: &[f32], h: usize, w: usize) -> RasterStack {
        RasterStack::new(
            1,
            h,
            w,
            values.to_vec(),
            GeoTransform::unit(),
            -9999.0,
            vec!["c0".into()],
        )
        .unwrap()
    }

    #[test]
    fn stats_constant_channel_clamps_std() {
        let r = stack_1ch(&[2.0, 2.0, 2.0], 1, 3);
        let s = compute_channel_stats(&r).unwrap();
        assert_eq!(s.mean(0), 2.0);
        assert_eq!(s.std(0), STD_FLOOR);
    }

    #[test]
    fn stats_symmetric_pair_population_std() {
        let r = stack_1ch(&[-1.0, 1.0], 1, 2);
        let s = compute_channel_stats(&r).unwrap();
        assert_eq!(s.mean(0), 0.0);
        assert_eq!(s.std(0), 1.0);
    }

    #[test]
    fn stats_four_values() {
        let r = stack_1ch(&[1.0, 2.0, 3.0, 4.0], 2, 2);
        let s = compute_channel_stats(&r).unwrap();
        assert!((s.mean(0) - 2.5).abs() < 1e-12);
        // population std of {1,2,3,4} = sqrt(1.25)
        assert!((s.std(0) - 1.118_033_988_749_895).abs() < 1e-12);
    }

    #[test]
    fn stats_skip_nodata_and_reject_all_nodata() {
        let mut vals = vec![-9999.0; 4];
        vals[0] = 3.0;
        let r = stack_1ch(&vals, 2, 2);
        let s = compute_channel_stats(&r).unwrap();
        assert_eq!(s.mean(0), 3.0);

        let r = stack_1ch(&[-9999.0; 4], 2, 2);
        assert!(matches!(
            compute_channel_stats(&r),
            Err(RasterError::AllNodataChannel { channel: 0, .. })
        ));
    }

    #[test]
    fn standardize_examples() {
        // constant channel -> all zeros
        let r = stack_1ch(&[7.0, 7.0], 1, 2);
        let s = compute_channel_stats(&r).unwrap();
        let out = standardize(&r, &s).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
        assert!(out.is_standardized());

        // identity stats leave data unchanged
        let r = stack_1ch(&[-1.0, 1.0], 1, 2);
        let out = standardize(&r, &ChannelStats::new(vec![0.0], vec![1.0])).unwrap();
        assert_eq!(out.data(), &[-1.0, 1.0]);

        // (5 - 3) / 2 = 1
        let r = stack_1ch(&[5.0], 1, 1);
        let out = standardize(&r, &ChannelStats::new(vec![3.0], vec![2.0])).unwrap();
        assert_eq!(out.data(), &[1.0]);
    }

    #[test]
    fn standardize_rejects_channel_mismatch_and_masks_nodata() {
        let r = stack_1ch(&[1.0, -9999.0], 1, 2);
        let stats = ChannelStats::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        assert!(matches!(
            standardize(&r, &stats),
            Err(RasterError::ChannelCountMismatch { .. })
        ));
        let s = compute_channel_stats(&r).unwrap();
        let out = standardize(&r, &s).unwrap();
        assert_eq!(out.data()[1], 0.0);
        assert!(out.pixel_is_nodata(0, 1));
        assert!(!out.pixel_is_nodata(0, 0));
    }

    #[test]
    fn ndvi_examples() {
        assert_eq!(ndvi(0.5, 0.5), 0.0);
        assert_eq!(ndvi(1.0, 0.0), 1.0);
        assert!((ndvi(0.6, 0.2) - 0.5).abs() < 1e-12);
        assert_eq!(ndvi(0.0, 0.0), 0.0);
    }

    #[test]
    fn ndvi_aggregate_singleton_and_series() {
        let r = stack_1ch(&[0.3, 0.7], 1, 2);
        let (amp, sum, max) = ndvi_aggregates(std::slice::from_ref(&r)).unwrap();
        assert_eq!(amp.data(), &[0.0, 0.0]);
        assert_eq!(sum.data(), r.data());
        assert_eq!(max.data(), r.data());

        let series = vec![
            stack_1ch(&[0.1], 1, 1),
            stack_1ch(&[0.5], 1, 1),
            stack_1ch(&[0.3], 1, 1),
        ];
        let (amp, sum, max) = ndvi_aggregates(&series).unwrap();
        assert!((amp.data()[0] - 0.4).abs() < 1e-6);
        assert!((sum.data()[0] - 0.9).abs() < 1e-6);
        assert!((max.data()[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn ndvi_aggregate_nodata_handling() {
        // one step nodata excludes that step; all-nodata pixel stays nodata
        let series = vec![stack_1ch(&[-9999.0, -9999.0], 1, 2), stack_1ch(&[0.2, -9999.0], 1, 2)];
        let (amp, sum, max) = ndvi_aggregates(&series).unwrap();
        assert_eq!(amp.data()[0], 0.0);
        assert!((sum.data()[0] - 0.2).abs() < 1e-6);
        assert!((max.data()[0] - 0.2).abs() < 1e-6);
        assert_eq!(amp.data()[1], -9999.0);
        assert_eq!(sum.data()[1], -9999.0);
        assert_eq!(max.data()[1], -9999.0);
    }

    #[test]
    fn ndvi_aggregate_errors() {
        assert!(matches!(ndvi_aggregates(&[]), Err(RasterError::EmptySeries)));
        let series = vec![stack_1ch(&[0.0], 1, 1), stack_1ch(&[0.0, 0.0], 1, 2)];
        assert!(matches!(
            ndvi_aggregates(&series),
            Err(RasterError::SeriesShapeMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn world_to_pixel_examples() {
        let gt = GeoTransform::new(0.0, 1000.0, 10.0, 10.0).unwrap();
        assert_eq!(gt.world_to_pixel(105.0, 995.0), (0, 10));
        assert_eq!(gt.world_to_pixel(0.0, 1000.0), (0, 0));
        assert_eq!(gt.world_to_pixel(0.0, 990.0), (1, 0));
    }

    #[test]
    fn world_pixel_roundtrip_identity() {
        let gt = GeoTransform::new(-350.0, 7_600_000.0, 10.0, 10.0).unwrap();
        for row in [0i64, 1, 7, 399] {
            for col in [0i64, 3, 8, 511] {
                let (x, y) = gt.pixel_center_to_world(row, col);
                assert_eq!(gt.world_to_pixel(x, y), (row, col));
            }
        }
    }

    #[test]
    fn extract_patch_degenerate_and_exact_cover() {
        let vals: Vec<f32> = (0..49 * 49).map(|i| i as f32).collect();
        let r = stack_1ch(&vals, 49, 49);
        let p = extract_patch(&r, 5, 7, 1).unwrap();
        assert_eq!(p.values(), &[r.value(0, 5, 7)]);
        assert_eq!(p.nodata_fraction(), 0.0);

        let p = extract_patch(&r, 24, 24, 49).unwrap();
        assert_eq!(p.values(), r.data());
        assert_eq!(p.nodata_fraction(), 0.0);
        assert_eq!(p.center_value(0), r.value(0, 24, 24));
    }

    #[test]
    fn extract_patch_corner_fill_fraction() {
        let r = stack_1ch(&(0..9).map(|i| i as f32 + 1.0).collect::<Vec<_>>(), 3, 3);
        let p = extract_patch(&r, 0, 0, 3).unwrap();
        // 5 of 9 pixels fall outside and are filled with 0
        assert!((p.nodata_fraction() - 5.0 / 9.0).abs() < 1e-6);
        assert_eq!(p.value(0, 0, 0), 0.0);
        assert_eq!(p.value(0, 1, 1), r.value(0, 0, 0));
    }

    #[test]
    fn extract_patch_errors() {
        let r = stack_1ch(&[1.0, -9999.0], 1, 2);
        assert!(matches!(
            extract_patch(&r, 0, 5, 3),
            Err(RasterError::CenterOutOfBounds { .. })
        ));
        assert!(matches!(
            extract_patch(&r, 0, 1, 3),
            Err(RasterError::CenterNodata { .. })
        ));
        assert!(matches!(
            extract_patch(&r, 0, 0, 2),
            Err(RasterError::BadPatchSize { size: 2 })
        ));
    }

    #[test]
    fn standardize_then_stats_is_zero_mean_unit_std() {
        let vals: Vec<f32> = (0..64).map(|i| (i as f32 * 0.37).sin() * 5.0 + 2.0).collect();
        let r = stack_1ch(&vals, 8, 8);
        let s = compute_channel_stats(&r).unwrap();
        let out = standardize(&r, &s).unwrap();
        let s2 = compute_channel_stats(&out).unwrap();
        assert!(s2.mean(0).abs() < 1e-6);
        assert!((s2.std(0) - 1.0).abs() < 1e-3);
    }
}
