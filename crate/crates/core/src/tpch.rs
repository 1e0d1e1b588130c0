//! TPC-H schema text and a small deterministic generator for TPC-H shaped data.
//!
//! The generator follows the key relationships and value domains of the
//! benchmark (partsupp supplier assignment, order/lineitem status rules,
//! fixed region and nation lists) closely enough for desk-scale execution
//! runs. It is not a replacement for `dbgen`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// TPC-H DDL with all primary and foreign keys declared.
pub const TPCH_DDL: &str = include_str!("../data/tpch.sql");

/// TPC-H DDL with primary keys only.
pub const TPCH_DDL_KEYS_ONLY: &str = include_str!("../data/tpch_keys_only.sql");

pub const TABLES: [&str; 8] = [
    "region", "nation", "part", "supplier", "partsupp", "customer", "orders", "lineitem",
];

const REGIONS: [&str; 5] = ["AFRICA", "AMERICA", "ASIA", "EUROPE", "MIDDLE EAST"];

const NATIONS: [(&str, u32); 25] = [
    ("ALGERIA", 0),
    ("ARGENTINA", 1),
    ("BRAZIL", 1),
    ("CANADA", 1),
    ("EGYPT", 4),
    ("ETHIOPIA", 0),
    ("FRANCE", 3),
    ("GERMANY", 3),
    ("INDIA", 2),
    ("INDONESIA", 2),
    ("IRAN", 4),
    ("IRAQ", 4),
    ("JAPAN", 2),
    ("JORDAN", 4),
    ("KENYA", 0),
    ("MOROCCO", 0),
    ("MOZAMBIQUE", 0),
    ("PERU", 1),
    ("CHINA", 2),
    ("ROMANIA", 3),
    ("SAUDI ARABIA", 4),
    ("VIETNAM", 2),
    ("RUSSIA", 3),
    ("UNITED KINGDOM", 3),
    ("UNITED STATES", 1),
];

const COLORS: [&str; 12] = [
    "almond",
    "antique",
    "aquamarine",
    "azure",
    "beige",
    "bisque",
    "black",
    "blanched",
    "blue",
    "blush",
    "brown",
    "burlywood",
];
const TYPE_1: [&str; 6] = ["STANDARD", "SMALL", "MEDIUM", "LARGE", "ECONOMY", "PROMO"];
const TYPE_2: [&str; 5] = ["ANODIZED", "BURNISHED", "PLATED", "POLISHED", "BRUSHED"];
const TYPE_3: [&str; 5] = ["TIN", "NICKEL", "BRASS", "STEEL", "COPPER"];
const CONTAINER_1: [&str; 5] = ["SM", "LG", "MED", "JUMBO", "WRAP"];
const CONTAINER_2: [&str; 8] = ["CASE", "BOX", "BAG", "JAR", "PKG", "PACK", "CAN", "DRUM"];
const SEGMENTS: [&str; 5] = [
    "AUTOMOBILE",
    "BUILDING",
    "FURNITURE",
    "MACHINERY",
    "HOUSEHOLD",
];
const PRIORITIES: [&str; 5] = ["1-URGENT", "2-HIGH", "3-MEDIUM", "4-NOT SPECIFIED", "5-LOW"];
const INSTRUCTIONS: [&str; 4] = [
    "DELIVER IN PERSON",
    "COLLECT COD",
    "NONE",
    "TAKE BACK RETURN",
];
const MODES: [&str; 7] = ["REG AIR", "AIR", "RAIL", "SHIP", "TRUCK", "MAIL", "FOB"];
const WORDS: [&str; 16] = [
    "furiously",
    "quickly",
    "carefully",
    "blithely",
    "slyly",
    "ironic",
    "final",
    "regular",
    "express",
    "pending",
    "deposits",
    "requests",
    "packages",
    "accounts",
    "theodolites",
    "pinto",
];

/// Row counts for the scalable tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TpchScale {
    pub parts: u64,
    pub suppliers: u64,
    pub customers: u64,
    pub orders: u64,
}

impl TpchScale {
    /// Row counts proportional to scale factor `sf` (sf = 1 is the 1 GB database).
    pub fn from_factor(sf: f64) -> Self {
        let rows = |base: f64| ((base * sf).round() as u64).max(1);
        TpchScale {
            parts: rows(200_000.0),
            suppliers: rows(10_000.0).max(4),
            customers: rows(150_000.0),
            orders: rows(1_500_000.0),
        }
    }
}

/// Days since 1970-01-01 to a `YYYY-MM-DD` string.
pub(crate) fn civil_date(days: i64) -> String {
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = doy - (153 * mp + 2) / 5 + 1;
    let month = if mp < 10 { mp + 3 } else { mp - 9 };
    let year = yoe + era * 400 + i64::from(month <= 2);
    format!("{year:04}-{month:02}-{day:02}")
}

const START_DATE: i64 = 8035; // 1992-01-01
const CURRENT_DATE: i64 = 9298; // 1995-06-17
const END_DATE: i64 = 10_440; // 1998-08-02

fn comment(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words)
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

fn phone(rng: &mut ChaCha8Rng, nation: u64) -> String {
    format!(
        "{}-{}-{}-{}",
        nation + 10,
        rng.gen_range(100..1000),
        rng.gen_range(100..1000),
        rng.gen_range(1000..10_000)
    )
}

fn money(cents: i64) -> String {
    format!("{}.{:02}", cents / 100, (cents % 100).abs())
}

fn retail_price(partkey: u64) -> i64 {
    (90_000 + ((partkey / 10) % 20_001) + 100 * (partkey % 1000)) as i64
}

/// The four suppliers of a part. The benchmark's formula can repeat a supplier
/// when there are few of them; repeats move to the next free key.
fn partsupp_suppliers(partkey: u64, suppliers: u64) -> [u64; 4] {
    let mut out = [0; 4];
    for i in 0..4 {
        let mut s =
            (partkey + i as u64 * (suppliers / 4 + (partkey - 1) / suppliers)) % suppliers + 1;
        while out[..i].contains(&s) {
            s = s % suppliers + 1;
        }
        out[i] = s;
    }
    out
}

struct Writer {
    out: BufWriter<File>,
    rows: u64,
}

impl Writer {
    fn create(dir: &Path, table: &str) -> std::io::Result<Self> {
        Ok(Writer {
            out: BufWriter::new(File::create(dir.join(format!("{table}.tbl")))?),
            rows: 0,
        })
    }

    fn row(&mut self, fields: &[String]) -> std::io::Result<()> {
        for f in fields {
            self.out.write_all(f.as_bytes())?;
            self.out.write_all(b"|")?;
        }
        self.out.write_all(b"\n")?;
        self.rows += 1;
        Ok(())
    }
}

/// Writes one pipe-delimited `<table>.tbl` file per table into `dir` and returns
/// the row count of each, in [`TABLES`] order.
pub fn write_tbl_files(
    dir: &Path,
    scale: TpchScale,
    seed: u64,
) -> std::io::Result<Vec<(String, u64)>> {
    if scale.suppliers < 4 || scale.parts == 0 || scale.customers == 0 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "need at least 4 suppliers and one part and customer",
        ));
    }
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = Vec::new();

    let mut w = Writer::create(dir, "region")?;
    for (k, name) in REGIONS.iter().enumerate() {
        w.row(&[k.to_string(), name.to_string(), comment(&mut rng, 6)])?;
    }
    counts.push(("region".to_string(), w.rows));

    let mut w = Writer::create(dir, "nation")?;
    for (k, (name, region)) in NATIONS.iter().enumerate() {
        w.row(&[
            k.to_string(),
            name.to_string(),
            region.to_string(),
            comment(&mut rng, 6),
        ])?;
    }
    counts.push(("nation".to_string(), w.rows));

    let mut w = Writer::create(dir, "part")?;
    for pk in 1..=scale.parts {
        let mfgr = rng.gen_range(1..=5);
        let name: Vec<&str> = (0..3)
            .map(|_| COLORS[rng.gen_range(0..COLORS.len())])
            .collect();
        w.row(&[
            pk.to_string(),
            name.join(" "),
            format!("Manufacturer#{mfgr}"),
            format!("Brand#{mfgr}{}", rng.gen_range(1..=5)),
            format!(
                "{} {} {}",
                TYPE_1[rng.gen_range(0..TYPE_1.len())],
                TYPE_2[rng.gen_range(0..TYPE_2.len())],
                TYPE_3[rng.gen_range(0..TYPE_3.len())]
            ),
            rng.gen_range(1..=50).to_string(),
            format!(
                "{} {}",
                CONTAINER_1[rng.gen_range(0..CONTAINER_1.len())],
                CONTAINER_2[rng.gen_range(0..CONTAINER_2.len())]
            ),
            money(retail_price(pk)),
            comment(&mut rng, 3),
        ])?;
    }
    counts.push(("part".to_string(), w.rows));

    let mut w = Writer::create(dir, "supplier")?;
    for sk in 1..=scale.suppliers {
        let nation = rng.gen_range(0..25u64);
        w.row(&[
            sk.to_string(),
            format!("Supplier#{sk:09}"),
            comment(&mut rng, 2),
            nation.to_string(),
            phone(&mut rng, nation),
            money(rng.gen_range(-99_999..=999_999)),
            comment(&mut rng, 8),
        ])?;
    }
    counts.push(("supplier".to_string(), w.rows));

    let mut w = Writer::create(dir, "partsupp")?;
    for pk in 1..=scale.parts {
        for sk in partsupp_suppliers(pk, scale.suppliers) {
            w.row(&[
                pk.to_string(),
                sk.to_string(),
                rng.gen_range(1..=9999).to_string(),
                money(rng.gen_range(100..=100_000)),
                comment(&mut rng, 10),
            ])?;
        }
    }
    counts.push(("partsupp".to_string(), w.rows));

    let mut w = Writer::create(dir, "customer")?;
    for ck in 1..=scale.customers {
        let nation = rng.gen_range(0..25u64);
        w.row(&[
            ck.to_string(),
            format!("Customer#{ck:09}"),
            comment(&mut rng, 2),
            nation.to_string(),
            phone(&mut rng, nation),
            money(rng.gen_range(-99_999..=999_999)),
            SEGMENTS[rng.gen_range(0..SEGMENTS.len())].to_string(),
            comment(&mut rng, 7),
        ])?;
    }
    counts.push(("customer".to_string(), w.rows));

    let mut orders = Writer::create(dir, "orders")?;
    let mut lines = Writer::create(dir, "lineitem")?;
    for ok in 1..=scale.orders {
        let orderdate = rng.gen_range(START_DATE..=END_DATE - 151);
        let custkey = rng.gen_range(1..=scale.customers);
        let line_count = rng.gen_range(1..=7);
        let mut total = 0i64;
        let mut open = 0;
        for ln in 1..=line_count {
            let partkey = rng.gen_range(1..=scale.parts);
            let suppkey = partsupp_suppliers(partkey, scale.suppliers)[rng.gen_range(0..4)];
            let quantity = rng.gen_range(1..=50i64);
            let extended = quantity * retail_price(partkey);
            let discount = rng.gen_range(0..=10i64);
            let tax = rng.gen_range(0..=8i64);
            let ship = orderdate + rng.gen_range(1..=121);
            let commit = orderdate + rng.gen_range(30..=90);
            let receipt = ship + rng.gen_range(1..=30);
            let returnflag = if receipt <= CURRENT_DATE {
                if rng.gen_bool(0.5) {
                    "R"
                } else {
                    "A"
                }
            } else {
                "N"
            };
            let linestatus = if ship > CURRENT_DATE { "O" } else { "F" };
            if linestatus == "O" {
                open += 1;
            }
            total += extended * (100 + tax) / 100 * (100 - discount) / 100;
            lines.row(&[
                ok.to_string(),
                partkey.to_string(),
                suppkey.to_string(),
                ln.to_string(),
                format!("{quantity}.00"),
                money(extended),
                format!("0.{discount:02}"),
                format!("0.{tax:02}"),
                returnflag.to_string(),
                linestatus.to_string(),
                civil_date(ship),
                civil_date(commit),
                civil_date(receipt),
                INSTRUCTIONS[rng.gen_range(0..INSTRUCTIONS.len())].to_string(),
                MODES[rng.gen_range(0..MODES.len())].to_string(),
                comment(&mut rng, 4),
            ])?;
        }
        let status = match open {
            0 => "F",
            n if n == line_count => "O",
            _ => "P",
        };
        orders.row(&[
            ok.to_string(),
            custkey.to_string(),
            status.to_string(),
            money(total),
            civil_date(orderdate),
            PRIORITIES[rng.gen_range(0..PRIORITIES.len())].to_string(),
            format!("Clerk#{:09}", rng.gen_range(1..=1000)),
            "0".to_string(),
            comment(&mut rng, 6),
        ])?;
    }
    counts.push(("orders".to_string(), orders.rows));
    counts.push(("lineitem".to_string(), lines.rows));
    orders.out.flush()?;
    lines.out.flush()?;
    Ok(counts)
}
