//! Dense row-major grids used for masks, rendered frames, and probability
//! maps. Pixel coordinates are `(u, v)` = (column, row); `u` runs along the
//! image lateral axis, `v` along the axial (depth) axis.

/// Row-major 2-D grid of copyable cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T: Copy> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Binary segmentation mask.
pub type Mask = Grid<bool>;
/// 8-bit grayscale image.
pub type GrayImage = Grid<u8>;
/// Per-pixel probability map in [0, 1].
pub type ProbImage = Grid<f64>;

impl<T: Copy> Grid<T> {
    /// Grid of `width × height` cells, all set to `fill`.
    pub fn filled(width: usize, height: usize, fill: T) -> Self {
        Self { width, height, data: vec![fill; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, u: usize, v: usize) -> T {
        debug_assert!(u < self.width && v < self.height);
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, value: T) {
        debug_assert!(u < self.width && v < self.height);
        self.data[v * self.width + u] = value;
    }

    pub fn same_dims<U: Copy>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Row-major cell slice.
    pub fn cells(&self) -> &[T] {
        &self.data
    }

    pub fn cells_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Row-major `((u, v), value)` iterator.
    pub fn enumerate(&self) -> impl Iterator<Item = ((usize, usize), T)> + '_ {
        let w = self.width;
        self.data.iter().enumerate().map(move |(i, &x)| ((i % w, i / w), x))
    }
}

impl Mask {
    /// Number of set pixels.
    pub fn count(&self) -> usize {
        self.cells().iter().filter(|&&b| b).count()
    }

    /// True when no pixel is set in both masks.
    pub fn disjoint(&self, other: &Mask) -> bool {
        self.same_dims(other)
            && self.cells().iter().zip(other.cells()).all(|(&a, &b)| !(a && b))
    }
}
