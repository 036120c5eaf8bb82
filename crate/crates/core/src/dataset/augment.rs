//! The eight symmetries of the square grid: rotations by multiples of 90
//! degrees, optionally followed by a vertical flip.

/// An element of the dihedral group D4 acting on square images.
///
/// Applied as a counter-clockwise rotation by `rot * 90` degrees followed by
/// a vertical (top-bottom) flip when `flip` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dihedral {
    rot: u8,
    flip: bool,
}

/// Linear action on centred `(row, col)` offsets.
type Mat = [[i32; 2]; 2];

const ROT90: Mat = [[0, -1], [1, 0]];
const FLIP: Mat = [[-1, 0], [0, 1]];
const IDENTITY: Mat = [[1, 0], [0, 1]];

fn mul(a: &Mat, b: &Mat) -> Mat {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][0] * b[0][j] + a[i][1] * b[1][j]))
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        rot: 0,
        flip: false,
    };

    /// Transform from its index `rot + 4 * flip`, 0..8.
    pub fn from_id(id: u8) -> Self {
        assert!(id < 8, "dihedral transform id {id} out of range");
        Self {
            rot: id % 4,
            flip: id >= 4,
        }
    }

    pub fn new(rot: u8, flip: bool) -> Self {
        Self { rot: rot % 4, flip }
    }

    pub fn id(self) -> u8 {
        self.rot + 4 * self.flip as u8
    }

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8).map(Dihedral::from_id)
    }

    fn matrix(self) -> Mat {
        let mut m = IDENTITY;
        for _ in 0..self.rot {
            m = mul(&ROT90, &m);
        }
        if self.flip {
            m = mul(&FLIP, &m);
        }
        m
    }

    fn from_matrix(m: Mat) -> Self {
        Dihedral::all()
            .find(|d| d.matrix() == m)
            .expect("orthogonal integer matrix is a dihedral element")
    }

    /// `self` followed by `next`.
    pub fn then(self, next: Dihedral) -> Dihedral {
        Self::from_matrix(mul(&next.matrix(), &self.matrix()))
    }

    pub fn inverse(self) -> Dihedral {
        let m = self.matrix();
        Self::from_matrix([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    /// Image of a centred `(row, col)` offset.
    pub fn map_offset(self, p: (f64, f64)) -> (f64, f64) {
        let m = self.matrix();
        (
            m[0][0] as f64 * p.0 + m[0][1] as f64 * p.1,
            m[1][0] as f64 * p.0 + m[1][1] as f64 * p.1,
        )
    }

    /// Image of a point in pad millimetres `(x, y)`, about the pad centre.
    pub fn map_point_mm(self, p_mm: (f64, f64), side_mm: f64) -> (f64, f64) {
        let h = side_mm / 2.0;
        let (row, col) = self.map_offset((p_mm.1 - h, p_mm.0 - h));
        (col + h, row + h)
    }

    /// Apply to an `n x n` image with `channels` interleaved values per pixel.
    pub fn apply<T: Copy>(self, data: &[T], n: usize, channels: usize) -> Vec<T> {
        assert_eq!(data.len(), n * n * channels, "image size mismatch");
        if self == Self::IDENTITY {
            return data.to_vec();
        }
        // Source offset of each destination pixel is the inverse (transpose) image.
        let m = self.matrix();
        let span = n as i64 - 1;
        let mut out = Vec::with_capacity(data.len());
        for i in 0..n {
            let y = 2 * i as i64 - span;
            for j in 0..n {
                let x = 2 * j as i64 - span;
                let ys = m[0][0] as i64 * y + m[1][0] as i64 * x;
                let xs = m[0][1] as i64 * y + m[1][1] as i64 * x;
                let (si, sj) = (((ys + span) / 2) as usize, ((xs + span) / 2) as usize);
                let src = (si * n + sj) * channels;
                out.extend_from_slice(&data[src..src + channels]);
            }
        }
        out
    }
}

/// Apply transform `transform_id` to a stack of images.
pub fn apply_dihedral<T: Copy>(
    stack: &[Vec<T>],
    n: usize,
    channels: usize,
    transform_id: u8,
) -> Vec<Vec<T>> {
    let d = Dihedral::from_id(transform_id);
    stack.iter().map(|img| d.apply(img, n, channels)).collect()
}
