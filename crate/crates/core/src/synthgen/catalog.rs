use std::collections::BTreeSet;

use crate::device_catalog::{SpecCatalogRow, TacCatalogRow, YearMonth};
use crate::types::Tac;

struct Model {
    tac_vendor: &'static str,
    family: &'static str,
    model: &'static str,
    brand: &'static str,
    spec_model: &'static str,
    price: f64,
    release: (i32, u32),
    os: &'static str,
}

const fn m(
    tac_vendor: &'static str,
    family: &'static str,
    model: &'static str,
    brand: &'static str,
    spec_model: &'static str,
    price: f64,
    release: (i32, u32),
    os: &'static str,
) -> Model {
    Model { tac_vendor, family, model, brand, spec_model, price, release, os }
}

// TAC-side vendor spellings carry case noise and pre-rename vendor names.
const MODELS: [Model; 20] = [
    m("SAMSUNG", "Galaxy S7", "SM-G930F", "Samsung", "Galaxy S7", 699.0, (2016, 3), "Android"),
    m("Samsung", "Galaxy S6", "SM-G920F", "Samsung", "Galaxy S6", 599.0, (2015, 4), "Android"),
    m("samsung", "Galaxy J1", "SM-J100H", "Samsung", "Galaxy J1", 119.0, (2015, 1), "Android"),
    m("Samsung", "Galaxy A5", "SM-A500F", "Samsung", "Galaxy A5", 369.0, (2014, 12), "Android"),
    m("Apple", "iPhone 6s", "A1688", "Apple", "iPhone 6s", 739.0, (2015, 9), "iOS"),
    m("APPLE", "iPhone 6", "A1586", "Apple", "iPhone 6", 679.0, (2014, 9), "iOS"),
    m("Apple", "iPhone 5s", "A1457", "Apple", "iPhone 5s", 549.0, (2013, 9), "iOS"),
    m("HUAWEI", "P8 Lite", "ALE-L21", "Huawei", "P8 Lite", 249.0, (2015, 5), "Android"),
    m("Huawei", "Y6", "SCL-L01", "Huawei", "Y6", 149.0, (2015, 6), "Android"),
    m("LG Electronics", "G4", "H815", "LG Electronics", "G4", 549.0, (2015, 5), "Android"),
    m("Sony", "Xperia Z3", "D6603", "Sony", "Xperia Z3", 599.0, (2014, 9), "Android"),
    m("SONY", "Xperia M4 Aqua", "E2303", "Sony", "Xperia M4 Aqua", 299.0, (2015, 6), "Android"),
    m("Nokia", "Lumia 640", "RM-1077", "Microsoft", "Lumia 640", 159.0, (2015, 4), "Windows Phone"),
    m("NOKIA", "Lumia 530", "RM-1017", "Microsoft", "Lumia 530", 79.0, (2014, 7), "Windows Phone"),
    m("Nokia", "105", "RM-908", "Microsoft", "105", 19.0, (2013, 5), "Series 30"),
    m("Microsoft", "Lumia 550", "RM-1127", "Microsoft", "Lumia 550", 139.0, (2015, 12), "Windows Phone"),
    m("RIM", "BlackBerry Q10", "SQN100-1", "BlackBerry", "Q10", 599.0, (2013, 4), "BlackBerry OS"),
    m("Research In Motion", "BlackBerry Curve 9320", "REX41GW", "BlackBerry", "Curve 9320", 199.0, (2012, 5), "BlackBerry OS"),
    m("Alcatel", "OneTouch Pixi 3", "4013D", "Alcatel", "OneTouch Pixi 3", 59.0, (2015, 3), "Android"),
    m("doro", "PhoneEasy 612", "DFB-0090", "Doro", "PhoneEasy 612", 119.0, (2014, 10), "Proprietary"),
];

const NON_PHONES: [(&str, &str, &str); 3] = [
    ("Huawei", "E3372", "E3372h-153"),
    ("Sierra Wireless", "AirPrime", "MC7304"),
    ("Telit", "GE910", "GE910-QUAD"),
];

pub(super) const TACS_PER_MODEL: u32 = 2;

/// Toy device universe shared by the catalogs and the subscriber draw.
pub(super) struct ToyCatalog {
    pub tac_rows: Vec<TacCatalogRow>,
    pub spec_rows: Vec<SpecCatalogRow>,
    pub blocklist: BTreeSet<Tac>,
    /// TAC variants and price per phone model.
    pub phones: Vec<(Vec<Tac>, f64)>,
    pub non_phone_tacs: Vec<Tac>,
    pub unknown_tacs: Vec<Tac>,
}

fn tac(v: u32) -> Tac {
    Tac::from_u32(v).expect("toy TAC in range")
}

pub(super) fn toy_catalog() -> ToyCatalog {
    let mut tac_rows = Vec::new();
    let mut spec_rows = Vec::new();
    let mut phones = Vec::new();
    for (i, model) in MODELS.iter().enumerate() {
        let tacs: Vec<Tac> = (0..TACS_PER_MODEL).map(|v| tac(35_100_000 + i as u32 * 100 + v)).collect();
        for &t in &tacs {
            tac_rows.push(TacCatalogRow {
                tac: t,
                vendor: Some(model.tac_vendor.to_string()),
                family: Some(model.family.to_string()),
                model: Some(model.model.to_string()),
                non_phone_hint: Some(false),
            });
        }
        spec_rows.push(SpecCatalogRow {
            brand: model.brand.to_string(),
            model: model.spec_model.to_string(),
            price_eur: Some(model.price),
            release: Some(YearMonth { year: model.release.0, month: model.release.1 }),
            os: Some(model.os.to_string()),
        });
        phones.push((tacs, model.price));
    }
    let mut non_phone_tacs = Vec::new();
    for (i, (vendor, family, model)) in NON_PHONES.iter().enumerate() {
        let t = tac(86_200_000 + i as u32);
        tac_rows.push(TacCatalogRow {
            tac: t,
            vendor: Some(vendor.to_string()),
            family: Some(family.to_string()),
            model: Some(model.to_string()),
            non_phone_hint: Some(true),
        });
        non_phone_tacs.push(t);
    }
    // Blocklisted data card absent from the TAC catalog.
    let card = tac(86_299_000);
    non_phone_tacs.push(card);
    ToyCatalog {
        tac_rows,
        spec_rows,
        blocklist: BTreeSet::from([card]),
        phones,
        non_phone_tacs,
        unknown_tacs: (0..4).map(|i| tac(99_000_000 + i)).collect(),
    }
}
