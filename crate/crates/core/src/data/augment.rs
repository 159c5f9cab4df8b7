//! The eight symmetries of the square.

use super::ImageY;

/// Optional horizontal flip followed by `quarter_turns` counter-clockwise
/// rotations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Orientation {
    pub flip: bool,
    pub quarter_turns: u8,
}

pub const ORIENTATIONS: [Orientation; 8] = {
    let mut out = [Orientation { flip: false, quarter_turns: 0 }; 8];
    let mut i = 0;
    while i < 8 {
        out[i] = Orientation {
            flip: i >= 4,
            quarter_turns: (i % 4) as u8,
        };
        i += 1;
    }
    out
};

fn flip_h(img: &ImageY) -> ImageY {
    let (h, w) = (img.height(), img.width());
    ImageY::from_fn(h, w, |y, x| img.get(y, w - 1 - x)).expect("same dims")
}

fn rot90(img: &ImageY) -> ImageY {
    let (h, w) = (img.height(), img.width());
    ImageY::from_fn(w, h, |y, x| img.get(x, w - 1 - y)).expect("same dims")
}

pub fn orient(img: &ImageY, o: Orientation) -> ImageY {
    let mut out = if o.flip { flip_h(img) } else { img.clone() };
    for _ in 0..o.quarter_turns % 4 {
        out = rot90(&out);
    }
    out
}

/// Undoes [`orient`] with the same orientation.
pub fn inverse_orientation(img: &ImageY, o: Orientation) -> ImageY {
    let mut out = img.clone();
    for _ in 0..(4 - o.quarter_turns % 4) % 4 {
        out = rot90(&out);
    }
    if o.flip {
        out = flip_h(&out);
    }
    out
}

/// All eight orientations, identity first.
pub fn augment_eightfold(img: &ImageY) -> Vec<ImageY> {
    ORIENTATIONS.iter().map(|&o| orient(img, o)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(h: usize, w: usize, vals: &[f32]) -> ImageY {
        ImageY::new(h, w, vals.to_vec()).unwrap()
    }

    #[test]
    fn constant_gives_identical_copies() {
        let c = ImageY::constant(3, 5, 0.4).unwrap();
        let out = augment_eightfold(&c);
        assert_eq!(out.len(), 8);
        assert!(out[..4].iter().step_by(2).all(|o| *o == c));
        assert!(out.iter().all(|o| o.values().iter().all(|&v| v == 0.4)));
    }

    #[test]
    fn two_by_one_enumerated() {
        let (a, b) = (0.25, 0.75);
        let src = img(1, 2, &[a, b]);
        let got: Vec<_> = augment_eightfold(&src)
            .iter()
            .map(|o| (o.height(), o.width(), o.values().to_vec()))
            .collect();
        let want = vec![
            (1, 2, vec![a, b]),
            (2, 1, vec![b, a]),
            (1, 2, vec![b, a]),
            (2, 1, vec![a, b]),
            (1, 2, vec![b, a]),
            (2, 1, vec![a, b]),
            (1, 2, vec![a, b]),
            (2, 1, vec![b, a]),
        ];
        assert_eq!(got, want);
    }

    #[test]
    fn all_eight_distinct_on_generic_image() {
        let src = img(2, 3, &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5]);
        let out = augment_eightfold(&src);
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(out[i], out[j], "{i} vs {j}");
            }
        }
    }

    proptest! {
        #[test]
        fn inverse_recovers_original(h in 1usize..6, w in 1usize..6, seed in 0u32..100) {
            let src = ImageY::from_fn(h, w, |y, x| ((y * 7 + x * 3 + seed as usize) % 11) as f32 / 10.0).unwrap();
            for (o, out) in ORIENTATIONS.iter().zip(augment_eightfold(&src)) {
                prop_assert_eq!(&inverse_orientation(&out, *o), &src);
            }
        }

        #[test]
        fn orbit_is_closed(h in 1usize..5, w in 1usize..5) {
            let src = ImageY::from_fn(h, w, |y, x| (y * w + x) as f32 / 20.0).unwrap();
            let orbit = augment_eightfold(&src);
            for member in &orbit {
                let again = augment_eightfold(member);
                for m in &again {
                    prop_assert!(orbit.contains(m));
                }
                for m in &orbit {
                    prop_assert!(again.contains(m));
                }
            }
        }
    }
}
