use proptest::prelude::*;
use specmae_core::cube::{
    apply_normalization, channel_min_max, drop_sentinel_channels, hsc_bytes, normalize_dataset,
    read_hsc, read_hsc_bytes, tile_scene, write_hsc, Dataset, HyperCube, Manifest, Split,
};
use specmae_core::Error;

fn cube(h: usize, w: usize, c: usize, wl: Option<Vec<f32>>, f: impl Fn(usize) -> f32) -> HyperCube {
    let data = (0..h * w * c).map(f).collect();
    HyperCube::new(h, w, c, data, wl).unwrap()
}

#[test]
fn single_value_cube_is_28_bytes_with_le_payload() {
    let c = cube(1, 1, 1, None, |_| 0.5);
    let bytes = hsc_bytes(&c);
    assert_eq!(bytes.len(), 28);
    assert_eq!(&bytes[0..4], b"HSC1");
    assert_eq!(&bytes[24..28], &[0x00, 0x00, 0x00, 0x3F]);
}

#[test]
fn wavelength_cube_is_84_bytes_with_flag_set() {
    let c = cube(2, 2, 3, Some(vec![500.0, 900.0, 1500.0]), |i| i as f32 * 0.01);
    let bytes = hsc_bytes(&c);
    assert_eq!(bytes.len(), 84);
    assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 1);
}

#[test]
fn two_wavelengths_use_8_bytes() {
    let with = cube(1, 1, 2, Some(vec![500.0, 1500.0]), |_| 0.0);
    let without = cube(1, 1, 2, None, |_| 0.0);
    assert_eq!(hsc_bytes(&with).len() - hsc_bytes(&without).len(), 8);
}

#[test]
fn bad_magic_is_a_format_error() {
    let mut bytes = hsc_bytes(&cube(1, 1, 1, None, |_| 0.0));
    bytes[0..4].copy_from_slice(b"XSC1");
    assert!(matches!(read_hsc_bytes(&bytes), Err(Error::Format(_))));
}

#[test]
fn unsupported_dtype_is_reported() {
    let mut bytes = hsc_bytes(&cube(1, 1, 1, None, |_| 0.0));
    bytes[16..20].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(read_hsc_bytes(&bytes), Err(Error::UnsupportedDtype(7))));
}

#[test]
fn truncation_and_trailing_bytes_are_format_errors() {
    let bytes = hsc_bytes(&cube(2, 3, 2, None, |i| i as f32));
    assert!(matches!(read_hsc_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
    let mut extended = bytes.clone();
    extended.push(0);
    assert!(matches!(read_hsc_bytes(&extended), Err(Error::Format(_))));
}

#[test]
fn file_round_trip_preserves_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.hsc");
    let c = cube(3, 4, 2, Some(vec![420.0, 2450.0]), |i| (i as f32).sin());
    write_hsc(&c, &path).unwrap();
    let back = read_hsc(&path).unwrap();
    assert_eq!(back, c);
    write_hsc(&back, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), hsc_bytes(&c));
}

#[test]
fn sentinel_channels_are_dropped_with_wavelengths() {
    // 224 channels, 6 of them uniformly sentinel
    let sentinel = -32768.0f32;
    let bad: [usize; 6] = [3, 50, 100, 150, 200, 223];
    let wl: Vec<f32> = (0..224).map(|i| 420.0 + i as f32 * 9.0).collect();
    let c = cube(2, 2, 224, Some(wl.clone()), |i| {
        let ch = i / 4;
        if bad.contains(&ch) {
            sentinel
        } else {
            ch as f32 * 0.001
        }
    });
    let kept = drop_sentinel_channels(&c, sentinel).unwrap();
    assert_eq!(kept.channels, 218);
    let expect_wl: Vec<f32> =
        (0..224).filter(|i| !bad.contains(i)).map(|i| wl[i]).collect();
    assert_eq!(kept.wavelengths.as_deref().unwrap(), &expect_wl[..]);
}

#[test]
fn sentinel_in_one_pixel_keeps_the_channel() {
    let sentinel = -32768.0f32;
    let mut c = cube(2, 2, 3, None, |i| i as f32);
    let idx = c.index(1, 0, 0);
    c.data[idx] = sentinel;
    let kept = drop_sentinel_channels(&c, sentinel).unwrap();
    assert_eq!(kept.channels, 3);
    assert_eq!(kept, c);
}

#[test]
fn all_sentinel_cube_is_empty() {
    let c = cube(2, 2, 2, None, |_| -1.0);
    assert!(matches!(drop_sentinel_channels(&c, -1.0), Err(Error::EmptyCube)));
}

#[test]
fn tiling_counts_match_floor_division() {
    let scene = cube(128, 128, 2, None, |i| i as f32);
    assert_eq!(tile_scene(&scene, 64).unwrap().len(), 4);

    let scene = cube(64, 64, 2, None, |i| i as f32);
    let tiles = tile_scene(&scene, 64).unwrap();
    assert_eq!(tiles.len(), 1);
    assert_eq!(tiles[0], scene);

    let scene = cube(70, 70, 2, None, |i| i as f32);
    assert_eq!(tile_scene(&scene, 64).unwrap().len(), 1);

    assert!(matches!(
        tile_scene(&scene, 71),
        Err(Error::NoTiles { .. })
    ));
}

#[test]
fn tiles_partition_the_scene_when_divisible() {
    let scene = cube(8, 12, 2, None, |i| i as f32);
    let tiles = tile_scene(&scene, 4).unwrap();
    assert_eq!(tiles.len(), 6);
    // reassemble by scan order and compare
    let mut rebuilt = vec![f32::NAN; scene.data.len()];
    let per_row = 12 / 4;
    for (t, tile) in tiles.iter().enumerate() {
        let oy = (t / per_row) * 4;
        let ox = (t % per_row) * 4;
        for c in 0..2 {
            for y in 0..4 {
                for x in 0..4 {
                    rebuilt[scene.index(c, oy + y, ox + x)] = tile.get(c, y, x);
                }
            }
        }
    }
    assert_eq!(rebuilt, scene.data);
}

#[test]
fn normalization_hand_case_and_degenerate_channel() {
    let t = cube(1, 3, 1, None, |i| [100.0, 200.0, 300.0][i]);
    let ds = Dataset::new(vec![t], Split::Train).unwrap();
    let normalized = normalize_dataset(&ds).unwrap();
    assert_eq!(normalized.tiles[0].data, vec![0.0, 0.5, 1.0]);
    assert_eq!(normalized.normalization.as_deref().unwrap(), &[(100.0, 300.0)]);

    let constant = cube(2, 2, 1, None, |_| 0.3);
    let ds = Dataset::new(vec![constant], Split::Train).unwrap();
    assert!(matches!(normalize_dataset(&ds), Err(Error::DegenerateChannel(0))));
}

#[test]
fn already_unit_range_channel_is_unchanged() {
    let t = cube(1, 2, 1, None, |i| i as f32);
    let ds = Dataset::new(vec![t.clone()], Split::Train).unwrap();
    let normalized = normalize_dataset(&ds).unwrap();
    assert_eq!(normalized.tiles[0].data, t.data);
}

#[test]
fn val_split_reuses_train_pairs_verbatim() {
    let train = cube(1, 2, 1, None, |i| [0.0, 10.0][i]);
    let tds = Dataset::new(vec![train], Split::Train).unwrap();
    let pairs = channel_min_max(&tds).unwrap();
    let val = cube(1, 2, 1, None, |i| [5.0, 20.0][i]);
    let vds = Dataset::new(vec![val], Split::Val).unwrap();
    let out = apply_normalization(&vds, &pairs).unwrap();
    // 20 clamps to 1 under the train range
    assert_eq!(out.tiles[0].data, vec![0.5, 1.0]);
}

#[test]
fn manifest_round_trip_and_split_loading() {
    let dir = tempfile::tempdir().unwrap();
    let t0 = cube(2, 2, 1, None, |i| i as f32);
    let t1 = cube(2, 2, 1, None, |i| (i + 1) as f32);
    write_hsc(&t0, &dir.path().join("a.hsc")).unwrap();
    write_hsc(&t1, &dir.path().join("b.hsc")).unwrap();
    let manifest = Manifest {
        tile_shape: [2, 2, 1],
        wavelengths: None,
        train: vec!["a.hsc".into()],
        val: vec!["b.hsc".into()],
        test: vec![],
        normalization: vec![[0.0, 3.0]],
    };
    let mpath = dir.path().join("manifest.json");
    manifest.save(&mpath).unwrap();
    let loaded = Manifest::load(&mpath).unwrap();
    assert_eq!(loaded.train, manifest.train);
    let train = loaded.load_split(&mpath, Split::Train).unwrap();
    assert_eq!(train.tiles[0].data, vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
    let raw = loaded.load_split_raw(&mpath, Split::Val).unwrap();
    assert_eq!(raw.tiles[0], t1);
}

#[test]
fn unknown_manifest_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mpath = dir.path().join("manifest.json");
    std::fs::write(
        &mpath,
        r#"{"tile_shape":[1,1,1],"wavelengths":null,"train":[],"val":[],"test":[],"normalization":[],"extra":1}"#,
    )
    .unwrap();
    assert!(Manifest::load(&mpath).is_err());
}

proptest! {
    #[test]
    fn hsc_round_trip(h in 1usize..5, w in 1usize..5, c in 1usize..4,
                      seedv in proptest::collection::vec(-1000.0f32..1000.0, 1..80),
                      with_wl in any::<bool>()) {
        let n = h * w * c;
        let data: Vec<f32> = (0..n).map(|i| seedv[i % seedv.len()] + i as f32 * 0.125).collect();
        let wl = with_wl.then(|| (0..c).map(|i| 400.0 + i as f32).collect());
        let cube = HyperCube::new(h, w, c, data, wl).unwrap();
        let back = read_hsc_bytes(&hsc_bytes(&cube)).unwrap();
        prop_assert_eq!(back, cube);
    }

    #[test]
    fn normalization_is_idempotent_with_recorded_pairs(
        vals in proptest::collection::vec(0.0f32..100.0, 8),
    ) {
        prop_assume!(vals.iter().cloned().fold(f32::MIN, f32::max)
            > vals.iter().cloned().fold(f32::MAX, f32::min));
        let t = HyperCube::new(2, 4, 1, vals, None).unwrap();
        let ds = Dataset::new(vec![t], Split::Train).unwrap();
        let once = normalize_dataset(&ds).unwrap();
        // re-applying the recorded pairs to the raw data gives the same tiles
        let pairs = channel_min_max(&ds).unwrap();
        let again = apply_normalization(&ds, &pairs).unwrap();
        prop_assert_eq!(&once.tiles[0].data, &again.tiles[0].data);
    }
}
