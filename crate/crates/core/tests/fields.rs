use dynca::fields::*;
use dynca::losses::FlowField;
use proptest::prelude::*;

#[test]
fn every_field_has_unit_mean_norm() {
    for kind in FieldKind::ALL {
        for side in [64, 128, 256] {
            let f = generate_field::<f32>(kind, side, side).unwrap();
            let mean = f
                .grid()
                .data()
                .chunks(2)
                .map(|p| (p[0] as f64).hypot(p[1] as f64))
                .sum::<f64>()
                / (side * side) as f64;
            assert!((mean - 1.0).abs() < 1e-5, "{kind} {side}: {mean}");
        }
    }
}

#[test]
fn right_and_up_are_constant_unit_vectors() {
    let r = generate_field::<f64>(FieldKind::Right, 17, 9).unwrap();
    assert!(r.grid().data().chunks(2).all(|p| p == [1.0, 0.0]));
    let u = generate_field::<f64>(FieldKind::Up, 8, 12).unwrap();
    assert!(u.grid().data().chunks(2).all(|p| p == [0.0, -1.0]));
}

#[test]
fn circular_points_right_below_the_centre_line() {
    let (h, w) = (8, 8);
    let raw = raw_field(FieldKind::Circular, h, w);
    // Column 3 and 4 straddle i = 0; at i = ±0.5 the v component is ∓0.5/diag.
    let diag = ((h * h + w * w) as f64).sqrt();
    for r in 4..8 {
        let (i, j) = lattice(r, 4, h, w);
        assert!(j > 0.0);
        let (u, v) = raw.at(r, 4);
        assert_eq!(u, j / diag);
        assert_eq!(v, -i / diag);
        assert!(u > 0.0);
    }
}

#[test]
fn diverge_is_negated_converge() {
    for (h, w) in [(8, 8), (64, 48), (13, 7)] {
        let c = raw_field(FieldKind::Converge, h, w);
        let d = raw_field(FieldKind::Diverge, h, w);
        assert!(c.grid().data().iter().zip(d.grid().data()).all(|(a, b)| *a == -*b));
        let c = generate_field::<f64>(FieldKind::Converge, h, w).unwrap();
        let d = generate_field::<f64>(FieldKind::Diverge, h, w).unwrap();
        assert!(c.grid().data().iter().zip(d.grid().data()).all(|(a, b)| *a == -*b));
    }
}

#[test]
fn two_block_x_flips_across_the_horizontal_midline() {
    let (h, w) = (16, 10);
    let f = generate_field::<f64>(FieldKind::TwoBlockX, h, w).unwrap();
    for r in 0..h {
        for c in 0..w {
            let (a, b) = (f.at(r, c), f.at(h - 1 - r, c));
            assert_eq!((a.0, a.1), (-b.0, -b.1));
        }
    }
}

#[test]
fn block_fields_follow_their_quadrants() {
    let (h, w) = (8, 8);
    let three = raw_field(FieldKind::ThreeBlock, h, w);
    assert_eq!(three.at(6, 1), (1.0, 0.0));
    assert_eq!(three.at(1, 6), (-1.0, 0.0));
    assert_eq!(three.at(1, 1), (0.0, 1.0));
    let four = raw_field(FieldKind::FourBlock, h, w);
    assert_eq!(four.at(6, 6), (1.0, 0.0));
    assert_eq!(four.at(1, 6), (0.0, -1.0));
    assert_eq!(four.at(6, 1), (0.0, 1.0));
    assert_eq!(four.at(1, 1), (-1.0, 0.0));
    let y = raw_field(FieldKind::TwoBlockY, h, w);
    assert_eq!(y.at(7, 0), (0.0, 1.0));
    assert_eq!(y.at(0, 0), (0.0, -1.0));
}

#[test]
fn accelerating_fields_grow_along_their_axis() {
    let (h, w) = (6, 10);
    let rr = raw_field(FieldKind::RightAccRight, h, w);
    let rd = raw_field(FieldKind::RightAccDown, h, w);
    for r in 0..h {
        for c in 0..w {
            assert_eq!(rr.at(r, c), (c as f64 + 0.5, 0.0));
            assert_eq!(rd.at(r, c), (r as f64 + 0.5, 0.0));
        }
    }
}

#[test]
fn circular_is_divergence_free_inside() {
    let (h, w) = (32, 32);
    let f = generate_field::<f64>(FieldKind::Circular, h, w).unwrap();
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let div = (f.at(r, c + 1).0 - f.at(r, c - 1).0) / 2.0 + (f.at(r + 1, c).1 - f.at(r - 1, c).1) / 2.0;
            assert!(div.abs() < 1e-5);
        }
    }
}

#[test]
fn names_round_trip() {
    for kind in FieldKind::ALL {
        assert_eq!(kind.name().parse::<FieldKind>().unwrap(), kind);
    }
    assert_eq!(FieldKind::names().len(), 12);
    assert!("sideways".parse::<FieldKind>().is_err());
}

#[test]
fn raw_export_is_u_plane_then_v_plane() {
    let f = FlowField::<f32>::from_fn(2, 2, |r, c| ((r * 2 + c) as f32, -((r * 2 + c) as f32)));
    let bytes = field_to_raw_f32(&f);
    let vals: Vec<f32> = bytes.chunks(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    assert_eq!(vals, vec![0.0, 1.0, 2.0, 3.0, 0.0, -1.0, -2.0, -3.0]);
}

#[test]
fn colour_wheel_matches_reference_table() {
    let wheel = color_wheel();
    assert_eq!(wheel.len(), 55);
    assert_eq!(wheel[0], [255.0, 0.0, 0.0]);
    assert_eq!(wheel[1], [255.0, 17.0, 0.0]);
    assert_eq!(wheel[15], [255.0, 255.0, 0.0]);
    assert_eq!(wheel[16], [213.0, 255.0, 0.0]);
    assert_eq!(wheel[21], [0.0, 255.0, 0.0]);
    assert_eq!(wheel[25], [0.0, 255.0, 255.0]);
    assert_eq!(wheel[36], [0.0, 0.0, 255.0]);
    assert_eq!(wheel[49], [255.0, 0.0, 255.0]);
    assert_eq!(wheel[54], [255.0, 0.0, 43.0]);
}

#[test]
fn zero_field_is_white_and_uniform_field_is_one_colour() {
    let img = colorize_flow(&FlowField::<f32>::zeros(5, 4));
    assert!(img.pixels().all(|p| p.0 == [255, 255, 255]));
    let right = generate_field::<f32>(FieldKind::Right, 6, 6).unwrap();
    let img = colorize_flow(&right);
    let first = img.get_pixel(0, 0).0;
    assert!(img.pixels().all(|p| p.0 == first));
    assert_ne!(first, [255, 255, 255]);
}

/// Independent wheel lookup at a fractional index.
fn wheel_at(fk: f64) -> [u8; 3] {
    let wheel = color_wheel();
    let k0 = fk.floor() as usize % 55;
    let k1 = (k0 + 1) % 55;
    let f = fk - fk.floor();
    [0, 1, 2].map(|c| ((1.0 - f) * wheel[k0][c] + f * wheel[k1][c]).round() as u8)
}

proptest! {
    #[test]
    fn quarter_turn_shifts_the_wheel_by_a_quarter(theta in -3.0f64..1.5) {
        let (c, s) = (theta.cos(), theta.sin());
        let f = FlowField::<f64>::from_fn(1, 1, |_, _| (c, s));
        let g = FlowField::<f64>::from_fn(1, 1, |_, _| (-s, c));
        let fk = |u: f64, v: f64| ((-v).atan2(-u) / std::f64::consts::PI + 1.0) / 2.0 * 54.0;
        let (a, b) = (fk(c, s), fk(-s, c));
        let shift = (b - a).rem_euclid(54.0);
        prop_assert!((shift - 13.5).abs() < 1e-9);
        prop_assert_eq!(colorize_flow(&f).get_pixel(0, 0).0, wheel_at(a));
        prop_assert_eq!(colorize_flow(&g).get_pixel(0, 0).0, wheel_at(b));
    }
}
