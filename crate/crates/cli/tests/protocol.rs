use std::path::PathBuf;

use dynca::imaging::RgbImage;
use dynca_cli::protocol::{parse_command, Command, FrameMessage, ProtocolError, Reply, TransformKind, FRAME_TAG};
use proptest::prelude::*;

#[test]
fn frame_layout_is_fixed() {
    let f = FrameMessage::new(2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
    assert_eq!(f.encode(), vec![0x01, 2, 0, 1, 0, 1, 2, 3, 4, 5, 6]);

    let wide = FrameMessage::new(300, 2, vec![9; 300 * 2 * 3]).unwrap().encode();
    assert_eq!(&wide[..5], &[FRAME_TAG, 0x2c, 0x01, 0x02, 0x00]);
    assert_eq!(wide.len(), 5 + 1800);
}

#[test]
fn frame_from_image_is_row_major_rgb() {
    let raw: Vec<u8> = (0..18).collect();
    let img = RgbImage::from_raw(3, 2, raw.clone()).unwrap();
    let f = FrameMessage::from_image(&img).unwrap();
    assert_eq!((f.width, f.height), (3, 2));
    assert_eq!(f.rgb, raw);
    assert_eq!(FrameMessage::decode(&f.encode()).unwrap(), f);
}

#[test]
fn frame_decoding_errors() {
    assert_eq!(FrameMessage::decode(&[]), Err(ProtocolError::Empty));
    assert_eq!(FrameMessage::decode(&[0x02, 1, 0, 1, 0, 0, 0, 0]), Err(ProtocolError::BadTag(2)));
    assert_eq!(FrameMessage::decode(&[0x01, 1, 0]), Err(ProtocolError::ShortHeader(3)));
    assert_eq!(
        FrameMessage::decode(&[0x01, 1, 0, 1, 0, 7, 7]),
        Err(ProtocolError::Payload { expected: 3, got: 2 })
    );
    assert!(FrameMessage::new(2, 2, vec![0; 11]).is_err());
    let big = RgbImage::new(70_000, 1);
    assert!(matches!(FrameMessage::from_image(&big), Err(ProtocolError::TooLarge { .. })));
}

proptest! {
    #[test]
    fn frame_round_trip(w in 0u16..40, h in 0u16..40, seed in any::<u8>()) {
        let rgb: Vec<u8> = (0..w as usize * h as usize * 3).map(|i| (i as u8).wrapping_mul(31) ^ seed).collect();
        let f = FrameMessage::new(w, h, rgb).unwrap();
        let bytes = f.encode();
        prop_assert_eq!(bytes.len(), 5 + 3 * w as usize * h as usize);
        prop_assert_eq!(FrameMessage::decode(&bytes).unwrap(), f);
    }
}

#[test]
fn every_command_parses() {
    let cases = [
        (r#"{"cmd":"set_direction","theta":1.5}"#, Command::SetDirection { theta: 1.5 }),
        (r#"{"cmd":"set_speed","t":12}"#, Command::SetSpeed { t: 12 }),
        (
            r#"{"cmd":"brush","x":3,"y":4.5,"radius":8}"#,
            Command::Brush {
                x: 3.0,
                y: 4.5,
                radius: 8.0,
            },
        ),
        (
            r#"{"cmd":"set_transform","kind":"circular_from_right"}"#,
            Command::SetTransform {
                kind: TransformKind::CircularFromRight,
                map: None,
            },
        ),
        (
            r#"{"cmd":"set_transform","kind":"map","map":[0.5,1]}"#,
            Command::SetTransform {
                kind: TransformKind::Map,
                map: Some(vec![0.5, 1.0]),
            },
        ),
        (
            r#"{"cmd":"resize","width":96,"height":64}"#,
            Command::Resize { width: 96, height: 64 },
        ),
        (
            r#"{"cmd":"load_weights","path":"w.dync"}"#,
            Command::LoadWeights {
                path: PathBuf::from("w.dync"),
            },
        ),
    ];
    for (text, expect) in cases {
        let got = parse_command(text).unwrap();
        assert_eq!(got, expect);
        assert_eq!(parse_command(&got.to_json()).unwrap(), got);
        assert!(text.contains(got.name()));
    }
}

#[test]
fn bad_commands_are_rejected() {
    let (name, _) = parse_command(r#"{"cmd":"explode"}"#).unwrap_err();
    assert_eq!(name.as_deref(), Some("explode"));
    let (name, _) = parse_command(r#"{"cmd":"set_speed"}"#).unwrap_err();
    assert_eq!(name.as_deref(), Some("set_speed"));
    let (name, _) = parse_command(r#"{"cmd":"set_speed","t":-1}"#).unwrap_err();
    assert_eq!(name.as_deref(), Some("set_speed"));
    assert!(parse_command(r#"{"cmd":"set_direction","theta":1,"extra":2}"#).is_err());
    let (name, _) = parse_command("not json").unwrap_err();
    assert_eq!(name, None);
    assert!(parse_command(r#"{"theta":1}"#).is_err());
}

#[test]
fn reply_records() {
    let ack = Reply::ack("brush", 120);
    assert_eq!(ack.to_json(), r#"{"ok":true,"cmd":"brush","step":120}"#);
    let err = Reply::error(None, 7, "bad");
    assert_eq!(Reply::from_json(&err.to_json()).unwrap(), err);
    assert!(err.to_json().contains(r#""error":"bad""#));
}
