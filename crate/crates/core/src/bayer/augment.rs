use super::{pack, unpack, PackedRaw, RawImage};
use crate::error::{Error, Result};

/// Element of the dihedral group D4 acting on packed planes.
///
/// Ids: 0 identity, 1 rotate 90° counter-clockwise, 2 rotate 180°,
/// 3 rotate 270°, 4 mirror left-right, 5 mirror top-bottom, 6 transpose,
/// 7 anti-transpose.
///
/// Output pixel `(i, j)` reads source pixel `F·T·(i, j)` in centred
/// coordinates, where `T` swaps the axes when `transpose` is set and `F`
/// negates the flagged source axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dihedral {
    transpose: bool,
    flip_rows: bool,
    flip_cols: bool,
}

const TABLE: [(bool, bool, bool); 8] = [
    (false, false, false),
    (true, false, true),
    (false, true, true),
    (true, true, false),
    (false, false, true),
    (false, true, false),
    (true, false, false),
    (true, true, true),
];

type Mat2 = [[i8; 2]; 2];

fn matmul2(a: Mat2, b: Mat2) -> Mat2 {
    let mut c = [[0i8; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

impl Dihedral {
    pub fn from_id(id: u8) -> Result<Self> {
        let &(transpose, flip_rows, flip_cols) = TABLE
            .get(id as usize)
            .ok_or_else(|| Error::Argument(format!("dihedral transform id must be in 0..8, got {id}")))?;
        Ok(Dihedral {
            transpose,
            flip_rows,
            flip_cols,
        })
    }

    pub fn id(self) -> u8 {
        TABLE
            .iter()
            .position(|&t| t == (self.transpose, self.flip_rows, self.flip_cols))
            .unwrap() as u8
    }

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8).map(|i| Dihedral::from_id(i).unwrap())
    }

    /// Whether the transform exchanges the horizontal and vertical axes; such
    /// transforms swap the roles of the two green planes.
    pub fn swaps_axes(self) -> bool {
        self.transpose
    }

    // Map from source point to destination point: dst = T·F·src.
    fn matrix(self) -> Mat2 {
        let f: Mat2 = [
            [if self.flip_rows { -1 } else { 1 }, 0],
            [0, if self.flip_cols { -1 } else { 1 }],
        ];
        let t: Mat2 = if self.transpose { [[0, 1], [1, 0]] } else { [[1, 0], [0, 1]] };
        matmul2(t, f)
    }

    fn from_matrix(a: Mat2) -> Self {
        let transpose = a[0][0] == 0;
        // F = T⁻¹·A with T an involution
        let f = if transpose { matmul2([[0, 1], [1, 0]], a) } else { a };
        Dihedral {
            transpose,
            flip_rows: f[0][0] < 0,
            flip_cols: f[1][1] < 0,
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(self, other: Dihedral) -> Dihedral {
        Self::from_matrix(matmul2(self.matrix(), other.matrix()))
    }

    pub fn inverse(self) -> Dihedral {
        Dihedral::all().find(|d| d.compose(self).id() == 0).unwrap()
    }

    fn apply_plane(self, src: &[f32], h: usize, w: usize) -> (Vec<f32>, usize, usize) {
        let (oh, ow) = if self.transpose { (w, h) } else { (h, w) };
        let mut out = Vec::with_capacity(h * w);
        for i in 0..oh {
            for j in 0..ow {
                let (mut y, mut x) = if self.transpose { (j, i) } else { (i, j) };
                if self.flip_rows {
                    y = h - 1 - y;
                }
                if self.flip_cols {
                    x = w - 1 - x;
                }
                out.push(src[y * w + x]);
            }
        }
        (out, oh, ow)
    }
}

/// Spatially transform every plane and swap G1/G2 for axis-swapping
/// transforms. R and B stay in their planes, so the unpacked mosaic keeps
/// the RGGB phase.
pub fn augment(packed: &PackedRaw, transform: u8) -> Result<PackedRaw> {
    let t = Dihedral::from_id(transform)?;
    let order: [usize; 4] = if t.swaps_axes() { [0, 2, 1, 3] } else { [0, 1, 2, 3] };
    let (h, w) = (packed.height(), packed.width());
    let mut data = Vec::with_capacity(packed.data().len());
    let mut dims = (h, w);
    for src in order {
        let (plane, oh, ow) = t.apply_plane(packed.plane(src), h, w);
        dims = (oh, ow);
        data.extend(plane);
    }
    PackedRaw::new(dims.0, dims.1, data)
}

/// [`augment`] on a mosaic via pack/unpack.
pub fn augment_raw(raw: &RawImage, transform: u8) -> Result<RawImage> {
    unpack(&augment(&pack(raw)?, transform)?)
}
