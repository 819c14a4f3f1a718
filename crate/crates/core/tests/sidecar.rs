use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use sdcomp::priors::{parse_priors, PriorsError};
use sdcomp::ImportanceLevel;

fn doc() -> Value {
    json!({
        "image": {"width": 64, "height": 48},
        "objects": [
            {"id": 1, "label": "cat", "bbox": [4, 4, 20, 16], "score": 0.9},
            {"id": 2, "label": "ball", "bbox": [40, 30, 3, 2], "score": 0.4, "mask_rle": [1, 4, 1]},
            {"id": 5, "label": "chair", "bbox": [0, 0, 64, 48], "score": 0.2}
        ],
        "captions": {"short": "a cat", "long": "a cat looks at a ball near a chair"},
        "ranking": {"L1": [1], "L2": [2], "L3": []}
    })
}

type Mutation = Box<dyn Fn(&mut Value)>;

fn parse(v: &Value) -> Result<sdcomp::SemanticPriors, PriorsError> {
    parse_priors(&v.to_string())
}

#[test]
fn accepts_the_reference_document() {
    let p = parse(&doc()).unwrap();
    assert_eq!((p.image_width, p.image_height, p.objects.len()), (64, 48, 3));
    let mask = p.object(2).unwrap().mask.as_ref().unwrap();
    assert_eq!(mask.count_ones(), 4);
    assert!(!mask.get(0, 0) && mask.get(1, 0) && !mask.get(2, 1));
    let r = p.ranking.as_ref().unwrap();
    assert_eq!(r.level_of(1), Some(ImportanceLevel::L1));
    assert_eq!(r.level_of(5), None);
    assert_eq!(parse_priors(&p.to_json()).unwrap(), p);
}

#[test]
fn rejects_invalid_documents() {
    let cases: Vec<(&str, Mutation)> = vec![
        ("zero id", Box::new(|d| d["objects"][0]["id"] = json!(0))),
        ("duplicate id", Box::new(|d| d["objects"][1]["id"] = json!(1))),
        ("bbox outside", Box::new(|d| d["objects"][0]["bbox"] = json!([50, 40, 20, 16]))),
        ("empty bbox", Box::new(|d| d["objects"][0]["bbox"] = json!([1, 1, 0, 3]))),
        ("score above one", Box::new(|d| d["objects"][0]["score"] = json!(1.5))),
        ("short mask", Box::new(|d| d["objects"][1]["mask_rle"] = json!([1, 4]))),
        ("long mask", Box::new(|d| d["objects"][1]["mask_rle"] = json!([1, 4, 2]))),
        ("unknown ranked id", Box::new(|d| d["ranking"]["L3"] = json!([9]))),
        ("ranked twice", Box::new(|d| d["ranking"]["L3"] = json!([1]))),
        ("empty caption", Box::new(|d| d["captions"]["short"] = json!("  "))),
        ("missing image", Box::new(|d| d.as_object_mut().unwrap().retain(|k, _| k != "image"))),
        ("negative width", Box::new(|d| d["image"]["width"] = json!(-3))),
        ("zero frame", Box::new(|d| d["image"]["height"] = json!(0))),
        ("id too large", Box::new(|d| d["objects"][0]["id"] = json!(70000))),
    ];
    for (name, mutate) in cases {
        let mut d = doc();
        mutate(&mut d);
        assert!(parse(&d).is_err(), "{name} accepted");
    }
    assert!(parse_priors("{").is_err());
    assert!(parse_priors("").is_err());
}

#[test]
fn mutated_documents_never_panic() {
    let base = doc().to_string().into_bytes();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20_000 {
        let mut b = base.clone();
        for _ in 0..rng.random_range(1..4) {
            let at = rng.random_range(0..b.len());
            b[at] = *b" 0123456789[]{},:\"-.e".get(rng.random_range(0..21)).unwrap();
        }
        if let Ok(text) = String::from_utf8(b) {
            if let Ok(p) = parse_priors(&text) {
                p.validate().unwrap();
            }
        }
    }
}
