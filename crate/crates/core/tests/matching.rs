use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satstereo::matching::{
    lr_consistency_filter, run_native_matcher, DisparityMap, MatcherSpec, NativeSpec, SignConvention,
};
use satstereo::raster::Raster;

/// Random-dot pair with `right(c) = left(c - shift)`, i.e.
/// `x_right = x_left + shift`.
fn random_dots(w: usize, h: usize, shift: i32, seed: u64) -> (Raster<f32>, Raster<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pad = shift.unsigned_abs() as usize + 2;
    let wide: Vec<f32> = (0..(w + 2 * pad) * h).map(|_| rng.random_range(0.0..255.0)).collect();
    let at = |c: isize, r: usize| wide[r * (w + 2 * pad) + (c + pad as isize) as usize];
    let left = Raster::from_fn(w, h, |c, r| at(c as isize, r));
    let right = Raster::from_fn(w, h, |c, r| at(c as isize - shift as isize, r));
    (left, right)
}

fn filtered(spec: &NativeSpec, l: &Raster<f32>, r: &Raster<f32>, dmin: i32, dmax: i32) -> DisparityMap {
    let fwd = run_native_matcher(spec, l, r, dmin, dmax).unwrap();
    let bwd = run_native_matcher(spec, r, l, -dmax, -dmin).unwrap();
    lr_consistency_filter(&fwd, &bwd, 2.0).unwrap()
}

fn check_shift(shift: i32, dmin: i32, dmax: i32) {
    let (w, h) = (120, 80);
    let (l, r) = random_dots(w, h, shift, (shift + 100) as u64);
    let d = filtered(&NativeSpec::default(), &l, &r, dmin, dmax);
    let margin = shift.unsigned_abs() as usize + 4;
    let (mut valid, mut good, mut interior) = (0, 0, 0);
    for row in 4..h - 4 {
        for col in margin..w - margin {
            interior += 1;
            let v = d.values.get(col, row);
            if !v.is_nan() {
                valid += 1;
                if (v - shift as f32).abs() <= 0.5 {
                    good += 1;
                }
            }
        }
    }
    assert!(valid as f64 >= 0.95 * interior as f64, "valid {valid} of {interior}");
    assert!(good as f64 >= 0.99 * valid as f64, "good {good} of {valid}");
}

#[test]
fn random_dots_positive_shift() {
    check_shift(7, 0, 15);
}

#[test]
fn random_dots_negative_shift() {
    check_shift(-9, -20, -2);
}

#[test]
fn four_paths_also_recover_the_shift() {
    let (l, r) = random_dots(96, 64, 5, 3);
    let spec = NativeSpec {
        paths: 4,
        census_window: 7,
        ..NativeSpec::default()
    };
    let d = filtered(&spec, &l, &r, 0, 12);
    let ok = d.valid().data().iter().zip(d.values.data()).filter(|(&v, &x)| v && (x - 5.0).abs() <= 0.5).count();
    assert!(ok as f64 > 0.85 * (96 * 64) as f64, "{ok}");
}

#[test]
fn matcher_spec_parses_from_toml() {
    let native: MatcherSpec = toml::from_str("kind = \"native\"\np2 = 120\n").unwrap();
    assert_eq!(
        native,
        MatcherSpec::Native(NativeSpec {
            p2: 120,
            ..NativeSpec::default()
        })
    );
    let ext: MatcherSpec =
        toml::from_str("kind = \"external\"\ncommand = \"/opt/m\"\nconvention = \"RIGHT_EQ_LEFT_MINUS_D\"\n").unwrap();
    let MatcherSpec::External(e) = ext else { panic!() };
    assert_eq!(e.convention, SignConvention::RightEqLeftMinusD);
    assert_eq!(e.args, ["{left}", "{right}", "{dmin}", "{dmax}", "{out}"]);
    assert!(toml::from_str::<MatcherSpec>("kind = \"native\"\nfoo = 1\n").is_err());
    assert!(toml::from_str::<MatcherSpec>("kind = \"native\"\np1 = 100\np2 = 50\n")
        .unwrap()
        .validate()
        .is_err());
}
