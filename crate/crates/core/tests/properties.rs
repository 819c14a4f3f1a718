use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdcomp::container::{self, LevelCode, RegionUnit, StructuredBitstream};
use sdcomp::pipeline::{decode_image, encode_image, LevelFilter, QualityProfile};
use sdcomp::priors::{heuristic_rank, GroundedObject, ImportanceLevel, Mask, Ranking, SemanticPriors};
use sdcomp::regioncodec::{decode_region, encode_region, mask_rle_decode, mask_rle_encode, QualityIndex};
use sdcomp::{Image, Rect};

fn arb_mask() -> impl Strategy<Value = Mask> {
    (1u32..40, 1u32..40).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<bool>(), (w * h) as usize).prop_map(move |bits| Mask::new(w, h, bits).unwrap())
    })
}

fn noise_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Image {
    let px = (0..w * h * 3).map(|_| rng.random::<u8>()).collect();
    Image::from_raw(w, h, px).unwrap()
}

/// Blocky image with a few flat rectangles and some noise.
fn textured_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Image {
    let mut img = Image::filled(w, h, [rng.random(), rng.random(), rng.random()]).unwrap();
    for _ in 0..4 {
        let (rw, rh) = (rng.random_range(1..=w), rng.random_range(1..=h));
        let (rx, ry) = (rng.random_range(0..=w - rw), rng.random_range(0..=h - rh));
        let c = [rng.random(), rng.random(), rng.random()];
        for y in ry..ry + rh {
            for x in rx..rx + rw {
                img.set_pixel(x, y, c);
            }
        }
    }
    for _ in 0..(w * h / 8) {
        let (x, y) = (rng.random_range(0..w), rng.random_range(0..h));
        img.set_pixel(x, y, [rng.random(), rng.random(), rng.random()]);
    }
    img
}

fn random_scene(rng: &mut ChaCha8Rng) -> (Image, SemanticPriors) {
    let (w, h) = (rng.random_range(16..96), rng.random_range(16..96));
    let img = textured_image(rng, w, h);
    let n = rng.random_range(0..6u16);
    let objects = (1..=n)
        .map(|id| {
            let (bw, bh) = (rng.random_range(1..=w / 2), rng.random_range(1..=h / 2));
            let bbox = Rect::new(rng.random_range(0..=w - bw), rng.random_range(0..=h - bh), bw, bh);
            let mask = rng
                .random_bool(0.5)
                .then(|| Mask::new(bw, bh, (0..bw * bh).map(|_| rng.random_bool(0.7)).collect()).unwrap());
            GroundedObject { id, label: format!("thing {id}"), bbox, score: rng.random(), mask }
        })
        .collect();
    (img, SemanticPriors { image_width: w, image_height: h, objects, captions: None, ranking: None })
}

fn arb_stream() -> impl Strategy<Value = StructuredBitstream> {
    let unit = (1u8..=4, 1u16..50, any::<bool>(), 1u8..=8, prop::collection::vec(any::<u8>(), 0..12));
    (1u32..300, 1u32..300, any::<[u8; 3]>(), prop::collection::vec(unit, 0..8), any::<bool>(), 1u8..=8).prop_map(
        |(w, h, mean, raw, with_bg, bg_q)| {
            let mut units: Vec<RegionUnit> = raw
                .into_iter()
                .map(|(level, id, masked, q, payload)| RegionUnit {
                    level: LevelCode::new(level).unwrap(),
                    object_id: id,
                    bbox: Rect::new(0, 0, w.min(7), h.min(5)),
                    quality: QualityIndex::new(q).unwrap(),
                    mask_bytes: masked.then(|| vec![0x02, 0x0c]),
                    payload,
                })
                .collect();
            let mut seen = std::collections::HashSet::new();
            units.retain(|u| seen.insert(u.object_id));
            units.sort_by_key(|u| (u.level, u.object_id));
            if with_bg {
                units.push(RegionUnit {
                    level: LevelCode::BACKGROUND,
                    object_id: 0,
                    bbox: Rect::full(w, h),
                    quality: QualityIndex::new(bg_q).unwrap(),
                    mask_bytes: None,
                    payload: vec![0xa5; 3],
                });
            }
            StructuredBitstream { width: w, height: h, mean_color: mean, units }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn mask_rle_round_trips(mask in arb_mask()) {
        let bytes = mask_rle_encode(&mask);
        prop_assert_eq!(mask_rle_decode(&bytes, mask.width(), mask.height()).unwrap(), mask);
    }

    #[test]
    fn mask_rle_decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..32), w in 1u32..20, h in 1u32..20) {
        if let Ok(m) = mask_rle_decode(&bytes, w, h) {
            prop_assert_eq!((m.width(), m.height()), (w, h));
        }
    }

    #[test]
    fn decode_region_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256), w in 1u32..40, h in 1u32..40, q in 1u8..=8) {
        if let Ok(img) = decode_region(&bytes, w, h, QualityIndex::new(q).unwrap()) {
            prop_assert_eq!((img.width(), img.height()), (w, h));
        }
    }

    #[test]
    fn container_parse_inverts_serialize(stream in arb_stream()) {
        let bytes = stream.serialize().unwrap();
        prop_assert_eq!(container::parse(&bytes).unwrap(), stream);
    }

    #[test]
    fn truncate_is_monotone_prefix(stream in arb_stream()) {
        let bytes = stream.serialize().unwrap();
        let mut prev = container::HEADER_LEN;
        for t in LevelCode::all() {
            let cut = container::truncate(&bytes, t).unwrap();
            prop_assert!(bytes.starts_with(&cut));
            prop_assert!(cut.len() >= prev);
            prev = cut.len();
            let parsed = container::parse(&cut).unwrap();
            prop_assert!(parsed.units.iter().all(|u| u.level <= t));
            let kept = stream.units.iter().filter(|u| u.level <= t).count();
            prop_assert_eq!(parsed.units.len(), kept);
        }
        prop_assert_eq!(container::truncate(&bytes, LevelCode::BACKGROUND).unwrap(), bytes);
    }

    #[test]
    fn psnr_is_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = noise_image(&mut rng, 9, 7);
        let b = noise_image(&mut rng, 9, 7);
        let ab = sdcomp::psnr(&a, &b, None).unwrap();
        prop_assert_eq!(ab, sdcomp::psnr(&b, &a, None).unwrap());
        prop_assert_eq!(sdcomp::psnr(&a, &a, None).unwrap(), f64::INFINITY);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn heuristic_rank_partitions_objects(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, priors) = random_scene(&mut rng);
        if priors.objects.is_empty() {
            prop_assert!(heuristic_rank(&priors).is_err());
            return Ok(());
        }
        let ranking = heuristic_rank(&priors).unwrap();
        prop_assert_eq!(ranking.clone(), heuristic_rank(&priors).unwrap());
        let n = priors.objects.len();
        prop_assert_eq!(ranking.len(), n);
        for o in &priors.objects {
            prop_assert!(ranking.level_of(o.id).is_some());
        }
        prop_assert_eq!(ranking.ids_at(ImportanceLevel::L1).len(), n.div_ceil(3));
    }

    #[test]
    fn payload_shrinks_as_quality_coarsens(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (rng.random_range(1..48), rng.random_range(1..48));
        let img = textured_image(&mut rng, w, h);
        let sizes: Vec<usize> = QualityIndex::all().map(|q| encode_region(&img, None, q).unwrap().bytes.len()).collect();
        prop_assert!(sizes.windows(2).all(|p| p[1] <= p[0]), "{:?}", sizes);
    }

    #[test]
    fn region_round_trip_keeps_size(seed in any::<u64>(), q in 1u8..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
        let img = noise_image(&mut rng, w, h);
        let q = QualityIndex::new(q).unwrap();
        let p = encode_region(&img, None, q).unwrap();
        prop_assert_eq!((p.coded_w % 8, p.coded_h % 8), (0, 0));
        let rec = decode_region(&p.bytes, w, h, q).unwrap();
        prop_assert_eq!((rec.width(), rec.height()), (w, h));
    }

    #[test]
    fn filtered_decode_matches_truncated_decode(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (img, priors) = random_scene(&mut rng);
        let mut ranking = Ranking::new();
        for o in &priors.objects {
            if let Some(&l) = ImportanceLevel::ALL.get(rng.random_range(0..4)) {
                ranking.assign(o.id, l).unwrap();
            }
        }
        let s = encode_image(&img, &priors, &ranking, &QualityProfile::default()).unwrap();
        for t in LevelCode::all() {
            let a = decode_image(&container::truncate(&s, t).unwrap(), LevelFilter::ALL).unwrap();
            prop_assert_eq!(a, decode_image(&s, LevelFilter { max_level: t }).unwrap());
        }
    }
}

#[test]
fn serialize_rejects_bad_ordering_and_duplicates() {
    let unit = |level: u8, id: u16| RegionUnit {
        level: LevelCode::new(level).unwrap(),
        object_id: id,
        bbox: Rect::new(0, 0, 2, 2),
        quality: QualityIndex::MIN,
        mask_bytes: None,
        payload: vec![],
    };
    let stream = |units| StructuredBitstream { width: 4, height: 4, mean_color: [0; 3], units };
    assert!(stream(vec![unit(2, 1), unit(1, 2)]).serialize().is_err());
    assert!(stream(vec![unit(1, 3), unit(2, 3)]).serialize().is_err());
    assert!(stream(vec![unit(1, 0)]).serialize().is_err());
    let mut masked = unit(1, 1);
    masked.mask_bytes = Some(vec![]);
    assert!(stream(vec![masked]).serialize().is_err());
    assert!(stream(vec![unit(1, 1), unit(3, 2)]).serialize().is_ok());
}

#[test]
fn encoder_output_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (img, priors) = random_scene(&mut rng);
    let ranking = heuristic_rank(&priors).unwrap();
    let profile = "1,2,3,4,8".parse::<QualityProfile>().unwrap();
    let a = encode_image(&img, &priors, &ranking, &profile).unwrap();
    let b = encode_image(&img, &priors, &ranking, &profile).unwrap();
    assert_eq!(a, b);
}
