use sdcomp::container;
use sdcomp::eval::{self, rd_sweep};
use sdcomp::pipeline::encode_image;
use sdcomp::priors::{GroundedObject, Ranking};
use sdcomp::{Image, LevelFilter, QualityProfile, Rect, SemanticPriors};

fn scene() -> (Image, SemanticPriors, Ranking) {
    let mut img = Image::filled(40, 32, [30, 60, 90]).unwrap();
    for y in 0..32 {
        for x in 0..40 {
            img.set_pixel(x, y, [(x * 6) as u8, (y * 7) as u8, ((x * y) % 251) as u8]);
        }
    }
    let obj = |id, bbox| GroundedObject { id, label: "o".into(), bbox, score: 0.5, mask: None };
    let priors = SemanticPriors {
        image_width: 40,
        image_height: 32,
        objects: vec![
            obj(1, Rect::new(2, 2, 10, 9)),
            obj(2, Rect::new(20, 10, 12, 15)),
            obj(3, Rect::new(30, 0, 9, 6)),
        ],
        captions: None,
        ranking: None,
    };
    let ranking = Ranking::from_levels([&[2], &[1], &[]]).unwrap();
    (img, priors, ranking)
}

#[test]
fn sweep_rows_agree_with_container() {
    let (img, priors, ranking) = scene();
    let filters: Vec<LevelFilter> = (1..=5).map(|l| LevelFilter::new(l).unwrap()).collect();
    let profiles: Vec<QualityProfile> =
        ["1,2,3,4,5", "2,3,4,5,6", "4,4,4,8,8"].iter().map(|p| p.parse().unwrap()).collect();
    let rows = rd_sweep(&img, &priors, &ranking, &filters, &profiles).unwrap();
    assert_eq!(rows.len(), filters.len() * profiles.len());
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.filter, filters[i / profiles.len()]);
        assert_eq!(r.profile, profiles[i % profiles.len()]);
        let s = encode_image(&img, &priors, &ranking, &r.profile).unwrap();
        let cut = container::truncate(&s, r.filter.max_level).unwrap();
        let manifest = container::inspect(&cut).unwrap();
        assert_eq!(r.bpp, manifest.bpp);
        assert_eq!(r.bpp, eval::bpp(cut.len(), 40, 32));
        assert!(r.psnr_objects.is_finite());
    }
    for p in 0..profiles.len() {
        let bpps: Vec<f64> = rows.iter().skip(p).step_by(profiles.len()).map(|r| r.bpp).collect();
        assert!(bpps.windows(2).all(|w| w[0] <= w[1]), "{bpps:?}");
    }
    // Object 3 is unranked, so its unit sits at level 4 and does not
    // change the ranked-object PSNR.
    let at = |level: u8, p: usize| &rows[(level as usize - 1) * profiles.len() + p];
    assert!(at(4, 0).bpp > at(3, 0).bpp);
    assert_eq!(at(4, 0).psnr_objects, at(3, 0).psnr_objects);
}

#[test]
fn unranked_scene_reports_nan_object_psnr() {
    let (img, priors, _) = scene();
    let rows = rd_sweep(&img, &priors, &Ranking::new(), &[LevelFilter::ALL], &[QualityProfile::default()]).unwrap();
    assert!(rows[0].psnr_objects.is_nan());
    assert!(eval::rows_to_csv(&rows).trim_end().ends_with(",nan"));
}
