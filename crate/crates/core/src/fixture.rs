//! Synthetic benchmark corpus: EU-style and regional-style CSV inputs with
//! known organisation alias groups, priority areas, themes and SDG phrases.
//!
//! Everything is generated from one seed, so the same seed always yields the
//! same bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::entity_resolution::{jaro_winkler, normalize_name};
use crate::pipeline::PipelineConfig;
use crate::sdg_tagger::{self, SdgVocabulary};

pub const SDG_VOCABULARY: &str = include_str!("../data/sdg_vocabulary.csv");

pub const PRIORITY_AREAS: [&str; 7] = [
    "FOOD",
    "ENERGY_RESOURCES",
    "NATURAL_BUILT_ENVIRONMENT",
    "MOBILITY",
    "HEALTH",
    "INDUSTRIAL",
    "SOCIAL_CULTURAL",
];

pub fn priority_labels() -> Vec<String> {
    PRIORITY_AREAS.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Kind {
    University,
    ResearchCentre,
    TechCentre,
    Company,
    PublicBody,
    Nonprofit,
}

impl Kind {
    fn regional_label(self) -> &'static str {
        match self {
            Kind::University => "Universitat",
            Kind::ResearchCentre => "Centre de recerca",
            Kind::TechCentre => "Centre tecnològic",
            Kind::Company => "Empresa",
            Kind::PublicBody => "Administració pública",
            Kind::Nonprofit => "Entitat sense ànim de lucre",
        }
    }

    fn activity_code(self) -> &'static str {
        match self {
            Kind::University => "HES",
            Kind::ResearchCentre | Kind::TechCentre => "REC",
            Kind::Company => "PRC",
            Kind::PublicBody => "PUB",
            Kind::Nonprofit => "OTH",
        }
    }
}

use Kind::*;

/// (name, country, province, kind, acronym). A non-empty province marks a
/// home-region organisation.
const ORGS: [(&str, &str, &str, Kind, &str); 121] = [
    ("Universitat de Barcelona", "ES", "Barcelona", University, "UB"),
    ("Universitat Autònoma de Barcelona", "ES", "Barcelona", University, "UAB"),
    ("Universitat Politècnica de Catalunya", "ES", "Barcelona", University, "UPC"),
    ("Universitat Pompeu Fabra", "ES", "Barcelona", University, "UPF"),
    ("Universitat de Girona", "ES", "Girona", University, "UdG"),
    ("Universitat de Lleida", "ES", "Lleida", University, "UdL"),
    ("Universitat Rovira i Virgili", "ES", "Tarragona", University, "URV"),
    ("Universitat Oberta de Catalunya", "ES", "Barcelona", University, "UOC"),
    ("Institut de Ciències Fotòniques", "ES", "Barcelona", ResearchCentre, "ICFO"),
    ("Centre de Regulació Genòmica", "ES", "Barcelona", ResearchCentre, "CRG"),
    ("Institut de Recerca i Tecnologia Agroalimentàries", "ES", "Lleida", ResearchCentre, "IRTA"),
    ("Barcelona Supercomputing Center", "ES", "Barcelona", ResearchCentre, "BSC"),
    ("Institut Català de Nanociència i Nanotecnologia", "ES", "Barcelona", ResearchCentre, "ICN2"),
    ("Centre Tecnològic de Telecomunicacions de Catalunya", "ES", "Barcelona", ResearchCentre, "CTTC"),
    ("Institut de Bioenginyeria de Catalunya", "ES", "Barcelona", ResearchCentre, "IBEC"),
    ("Institut Català de Recerca de l'Aigua", "ES", "Girona", ResearchCentre, "ICRA"),
    ("Centre de Visió per Computador", "ES", "Barcelona", ResearchCentre, "CVC"),
    ("Institut d'Investigació Biomèdica de Girona", "ES", "Girona", ResearchCentre, "IDIBGI"),
    ("Centre de Recerca Ecològica i Aplicacions Forestals", "ES", "Barcelona", ResearchCentre, "CREAF"),
    ("Institut Català d'Investigació Química", "ES", "Tarragona", ResearchCentre, "ICIQ"),
    ("Eurecat Centre Tecnològic", "ES", "Barcelona", TechCentre, ""),
    ("Leitat Technological Center", "ES", "Barcelona", TechCentre, ""),
    ("Fundació CTM Centre Tecnològic", "ES", "Barcelona", TechCentre, ""),
    ("Aqualia Tech S.L.", "ES", "Tarragona", Company, ""),
    ("Aqualia Tec S.L.", "ES", "Girona", Company, ""),
    ("Roca Sistemes Hidràulics S.A.", "ES", "Barcelona", Company, ""),
    ("Vidal Biotech S.L.", "ES", "Barcelona", Company, ""),
    ("Ferrer Agrotech S.L.", "ES", "Lleida", Company, ""),
    ("Puig Mobilitat Elèctrica S.L.", "ES", "Barcelona", Company, ""),
    ("Serra Energies Renovables S.A.", "ES", "Tarragona", Company, ""),
    ("Costa Robotics S.L.", "ES", "Barcelona", Company, ""),
    ("Soler Packaging Solutions S.L.", "ES", "Girona", Company, ""),
    ("Vila Smart Farming S.L.", "ES", "Lleida", Company, ""),
    ("Pujol Salut Digital S.L.", "ES", "Barcelona", Company, ""),
    ("Font Materials Avançats S.A.", "ES", "Tarragona", Company, ""),
    ("Riera Logistics S.L.", "ES", "Barcelona", Company, ""),
    ("Casals Nutrició S.L.", "ES", "Girona", Company, ""),
    ("Bosch Vinyes i Cellers S.A.", "ES", "Tarragona", Company, ""),
    ("Mas Aeroespacial S.L.", "ES", "Barcelona", Company, ""),
    ("Camps Fotònica S.L.", "ES", "Barcelona", Company, ""),
    ("Ribas Circular Plastics S.L.", "ES", "Tarragona", Company, ""),
    ("Torras Biomedical Devices S.L.", "ES", "Barcelona", Company, ""),
    ("Oliva Aquaculture S.L.", "ES", "Tarragona", Company, ""),
    ("Prat Textile Innovation S.A.", "ES", "Barcelona", Company, ""),
    ("Grau Construccions Sostenibles S.L.", "ES", "Lleida", Company, ""),
    ("Ajuntament de Barcelona", "ES", "Barcelona", PublicBody, ""),
    ("Ajuntament de Girona", "ES", "Girona", PublicBody, ""),
    ("Agència de Residus de Catalunya", "ES", "Barcelona", PublicBody, ""),
    ("Consorci Sanitari de Terrassa", "ES", "Barcelona", PublicBody, ""),
    ("Diputació de Tarragona", "ES", "Tarragona", PublicBody, ""),
    ("Hospital Clínic de Barcelona", "ES", "Barcelona", PublicBody, ""),
    ("Hospital Universitari Vall d'Hebron", "ES", "Barcelona", PublicBody, ""),
    ("Fundació Bosch i Gimpera", "ES", "Barcelona", Nonprofit, ""),
    ("Associació Catalana d'Empreses de Biotecnologia", "ES", "Barcelona", Nonprofit, ""),
    ("Fundació Catalana per a la Recerca i la Innovació", "ES", "Barcelona", Nonprofit, ""),
    ("Associació Clúster Alimentari de Catalunya", "ES", "Lleida", Nonprofit, ""),
    ("Fundació Mobile World Capital", "ES", "Barcelona", Nonprofit, ""),
    ("Cooperativa Agrària de Guissona", "ES", "Lleida", Nonprofit, ""),
    ("Fundació i2CAT", "ES", "Barcelona", Nonprofit, ""),
    ("Fundació Privada Institut de Salut Global", "ES", "Barcelona", Nonprofit, "ISGlobal"),
    ("Universidad Politécnica de Madrid", "ES", "", University, "UPM"),
    ("Universidad de Sevilla", "ES", "", University, ""),
    ("Universidad de Zaragoza", "ES", "", University, ""),
    ("Universidad del País Vasco", "ES", "", University, "UPV/EHU"),
    ("Consejo Superior de Investigaciones Científicas", "ES", "", ResearchCentre, "CSIC"),
    ("Fundación Tecnalia Research & Innovation", "ES", "", ResearchCentre, ""),
    ("Ikerlan S. Coop.", "ES", "", ResearchCentre, ""),
    ("Centro de Investigaciones Energéticas, Medioambientales y Tecnológicas", "ES", "", ResearchCentre, "CIEMAT"),
    ("Fundación Cidaut", "ES", "", ResearchCentre, ""),
    ("Repsol S.A.", "ES", "", Company, ""),
    ("Iberdrola Clientes S.A.", "ES", "", Company, ""),
    ("Telefónica Investigación y Desarrollo S.A.", "ES", "", Company, ""),
    ("Acciona Construcción S.A.", "ES", "", Company, ""),
    ("Centre National de la Recherche Scientifique", "FR", "", ResearchCentre, "CNRS"),
    ("Commissariat à l'Énergie Atomique et aux Énergies Alternatives", "FR", "", ResearchCentre, "CEA"),
    ("Université de Bordeaux", "FR", "", University, ""),
    ("Université Grenoble Alpes", "FR", "", University, ""),
    ("Institut National de Recherche pour l'Agriculture", "FR", "", ResearchCentre, "INRAE"),
    ("Sorbonne Université", "FR", "", University, ""),
    ("Thales Research & Technology SAS", "FR", "", Company, ""),
    ("Air Liquide SA", "FR", "", Company, ""),
    ("Fraunhofer-Gesellschaft zur Förderung der angewandten Forschung e.V.", "DE", "", ResearchCentre, ""),
    ("Technische Universität München", "DE", "", University, "TUM"),
    ("Universität Stuttgart", "DE", "", University, ""),
    ("Karlsruher Institut für Technologie", "DE", "", University, "KIT"),
    ("Siemens Aktiengesellschaft", "DE", "", Company, ""),
    ("Deutsches Zentrum für Luft- und Raumfahrt e.V.", "DE", "", ResearchCentre, "DLR"),
    ("Helmholtz-Zentrum Berlin für Materialien und Energie GmbH", "DE", "", ResearchCentre, ""),
    ("Robert Bosch GmbH", "DE", "", Company, ""),
    ("Consiglio Nazionale delle Ricerche", "IT", "", ResearchCentre, "CNR"),
    ("Politecnico di Milano", "IT", "", University, "POLIMI"),
    ("Alma Mater Studiorum Università di Bologna", "IT", "", University, ""),
    ("Università degli Studi di Padova", "IT", "", University, ""),
    ("Agenzia Nazionale per le Nuove Tecnologie", "IT", "", ResearchCentre, "ENEA"),
    ("Fondazione Bruno Kessler", "IT", "", ResearchCentre, "FBK"),
    ("Technische Universiteit Delft", "NL", "", University, "TU Delft"),
    ("Wageningen University", "NL", "", University, ""),
    ("Nederlandse Organisatie voor Toegepast Natuurwetenschappelijk Onderzoek", "NL", "", ResearchCentre, "TNO"),
    ("Universiteit van Amsterdam", "NL", "", University, ""),
    ("Philips Electronics Nederland B.V.", "NL", "", Company, ""),
    ("Universidade de Lisboa", "PT", "", University, ""),
    ("Universidade do Porto", "PT", "", University, ""),
    ("INESC TEC Instituto de Engenharia de Sistemas e Computadores", "PT", "", ResearchCentre, ""),
    ("Katholieke Universiteit Leuven", "BE", "", University, "KU Leuven"),
    ("Interuniversitair Micro-Electronica Centrum", "BE", "", ResearchCentre, "IMEC"),
    ("Universiteit Gent", "BE", "", University, ""),
    ("Vlaamse Instelling voor Technologisch Onderzoek N.V.", "BE", "", ResearchCentre, "VITO"),
    ("Danmarks Tekniske Universitet", "DK", "", University, "DTU"),
    ("Aarhus Universitet", "DK", "", University, ""),
    ("Kungliga Tekniska Högskolan", "SE", "", University, "KTH"),
    ("Chalmers Tekniska Högskola AB", "SE", "", University, ""),
    ("RISE Research Institutes of Sweden AB", "SE", "", ResearchCentre, ""),
    ("AIT Austrian Institute of Technology GmbH", "AT", "", ResearchCentre, ""),
    ("Technische Universität Wien", "AT", "", University, ""),
    ("Teknologian Tutkimuskeskus VTT Oy", "FI", "", ResearchCentre, "VTT"),
    ("Aalto Korkeakoulusäätiö", "FI", "", University, ""),
    ("University College Dublin", "IE", "", University, "UCD"),
    ("Trinity College Dublin", "IE", "", University, ""),
    ("Ethniko Kentro Erevnas kai Technologikis Anaptyxis", "GR", "", ResearchCentre, "CERTH"),
    ("Ethniko Metsovio Polytechneio", "GR", "", University, "NTUA"),
    ("Politechnika Warszawska", "PL", "", University, ""),
];

/// Alias that only an override can join to its organisation.
pub const OVERRIDE_MERGE: (&str, &str) = ("Univ. Pompeu Fabra", "Universitat Pompeu Fabra");
/// Two distinct companies whose names the fuzzy matcher would join.
pub const OVERRIDE_SPLIT: (&str, &str) = ("Aqualia Tech S.L.", "Aqualia Tec S.L.");

const AREA_WORDS: [&[&str]; 7] = [
    &[
        "agrifood", "livestock", "dairy", "nutrition", "farming", "harvest", "irrigation", "vineyards",
        "olive", "wine", "cereals", "orchards", "poultry", "agronomy", "fruit", "meat", "tomato", "bakery",
    ],
    &[
        "hydrogen", "batteries", "electrolysers", "turbines", "biogas", "biomass", "geothermal",
        "electricity", "fuel", "reactor", "inverter", "methane", "thermal", "kilowatt", "refinery",
        "pipelines", "heat", "nuclear",
    ],
    &[
        "buildings", "rivers", "forests", "wetlands", "landscape", "urbanism", "retrofit", "insulation",
        "flood", "wildfire", "coastline", "architecture", "habitats", "watershed", "rainfall", "drought",
        "pollinators", "facade",
    ],
    &[
        "vehicles", "railway", "automotive", "traffic", "logistics", "drones", "aviation", "aircraft",
        "ports", "charging", "electric", "autonomous", "fleet", "cycling", "trains", "shipping", "roads",
        "freight",
    ],
    &[
        "patients", "clinical", "cancer", "hospital", "diagnosis", "therapy", "genomics", "biomarkers",
        "cardiac", "imaging", "surgery", "drugs", "pharma", "tumour", "immune", "neurons", "dementia",
        "epidemiology",
    ],
    &[
        "robotics", "machining", "additive", "composites", "alloys", "sensors", "factory", "automation",
        "coatings", "polymers", "lasers", "microelectronics", "semiconductors", "welding", "textiles",
        "packaging", "ceramics", "metallurgy",
    ],
    &[
        "museums", "tourism", "creativity", "citizens", "archives", "theatre", "music", "language",
        "libraries", "journalism", "democracy", "festivals", "crafts", "volunteering", "elderly",
        "neighbourhoods", "literature", "cinema",
    ],
];

/// Theme of each priority area; generic projects draw a theme directly.
const AREA_THEME: [usize; 7] = [0, 1, 0, 1, 2, 1, 2];

const THEME_WORDS: [&[&str]; 3] = [
    &[
        "bioeconomy", "organic", "microbial", "seasonal", "rural", "territorial", "nature", "ecological",
        "green", "fertile", "plants", "hydrology", "biological",
    ],
    &[
        "engineering", "electronics", "mechanical", "components", "hardware", "electrification",
        "optimisation", "throughput", "devices", "modular", "firmware", "actuators", "controllers",
    ],
    &[
        "wellbeing", "society", "people", "behavioural", "families", "participatory", "ethics",
        "lifestyle", "inclusive", "engagement", "cognition", "demographic", "care",
    ],
];

const FILLER_WORDS: [&str; 36] = [
    "project", "consortium", "novel", "approach", "methods", "results", "pilot", "demonstration",
    "validation", "framework", "platform", "tools", "partners", "european", "regional", "advanced",
    "integrated", "analysis", "solutions", "scalable", "open", "impact", "objectives", "activities",
    "phase", "testing", "evaluation", "knowledge", "experts", "outputs", "market", "value", "chain",
    "strategy", "methodology", "benchmarking",
];

/// EU programme prefix, EU topic-code prefix and regional programme code per area.
const AREA_CODES: [(&str, &str, &str); 7] = [
    ("H2020-SC2", "SFS", "AGRO"),
    ("H2020-SC3", "LC-SC3", "ENER"),
    ("H2020-SC5", "SC5", "ENV"),
    ("H2020-SC4", "MG", "MOB"),
    ("H2020-SC1", "SC1-BHC", "SALUT"),
    ("H2020-LEIT-NMBP", "NMBP", "IND"),
    ("H2020-SC6", "SC6-TRANSFORMATIONS", "CULT"),
];

const EU_GENERIC_PROGRAMMES: [(&str, &str, &str); 2] =
    [("H2020-ERC", "ERC-StG", "ERC-STG"), ("H2020-MSCA", "MSCA-ITN", "MSCA-ITN")];

const VETERINARY_TAG: &str = "EC:VETERINARY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub seed: u64,
    pub n_eu: usize,
    pub n_regional: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            seed: 2024,
            n_eu: 300,
            n_regional: 200,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AliasGroup {
    pub canonical: String,
    pub country: String,
    pub home: bool,
    /// Raw names actually written to the inputs.
    pub names: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GroundTruth {
    /// Priority areas per (prefixed) project id; empty for generic projects.
    pub areas: BTreeMap<String, BTreeSet<String>>,
    pub themes: BTreeMap<String, usize>,
    /// SDGs whose phrases were planted in the text.
    pub sdgs: BTreeMap<String, BTreeSet<u8>>,
    pub alias_groups: Vec<AliasGroup>,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub eu_projects_csv: String,
    pub eu_participants_csv: String,
    pub regional_csv: String,
    pub rules_csv: String,
    pub overrides_csv: String,
    pub topic_labels_csv: String,
    pub gold_a_csv: String,
    pub gold_b_csv: String,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub root: PathBuf,
    pub config: PathBuf,
    pub eu_projects: PathBuf,
    pub eu_participants: PathBuf,
    pub regional: PathBuf,
    pub truth: PathBuf,
}

struct OrgSpec {
    name: &'static str,
    country: &'static str,
    province: &'static str,
    kind: Kind,
    aliases: Vec<String>,
}

impl OrgSpec {
    fn home(&self) -> bool {
        !self.province.is_empty()
    }
}

fn strip_accents(s: &str) -> String {
    s.nfkd().filter(|c| !is_combining_mark(*c)).collect()
}

fn candidate_variants(name: &str, kind: Kind, acronym: &str) -> Vec<String> {
    let mut out = vec![name.to_uppercase()];
    let plain = strip_accents(name);
    if plain != name {
        out.push(plain);
    }
    if kind == Company {
        for (suffix, alts) in [(" S.L.", [" SL", ", S.L."]), (" S.A.", [" SA", ", S.A."])] {
            if let Some(stem) = name.strip_suffix(suffix) {
                out.extend(alts.iter().map(|a| format!("{stem}{a}")));
            }
        }
    }
    if !acronym.is_empty() {
        out.push(format!("{name} ({acronym})"));
    }
    // Transposition inside the longest token after the first.
    let tokens: Vec<&str> = name.split(' ').collect();
    if let Some((idx, tok)) = tokens
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, t)| t.chars().count() >= 6 && t.chars().all(char::is_alphabetic))
        .max_by_key(|(i, t)| (t.chars().count(), std::cmp::Reverse(*i)))
    {
        let mut chars: Vec<char> = tok.chars().collect();
        let m = chars.len() / 2;
        if chars[m - 1] != chars[m] {
            chars.swap(m - 1, m);
            let mut t2 = tokens.clone();
            let typo: String = chars.into_iter().collect();
            t2[idx] = &typo;
            out.push(t2.join(" "));
        }
    }
    out
}

fn first_token(norm: &str) -> &str {
    norm.split(' ').next().unwrap_or("")
}

/// Builds alias lists so that aliases of one organisation share a block with
/// their canonical name and score high against it, while aliases of
/// different organisations in one block stay clearly below the merge
/// threshold.
fn build_orgs(rng: &mut ChaCha8Rng) -> Vec<OrgSpec> {
    let mut orgs: Vec<OrgSpec> = ORGS
        .iter()
        .map(|&(name, country, province, kind, _)| OrgSpec {
            name,
            country,
            province,
            kind,
            aliases: vec![name.to_string()],
        })
        .collect();
    let split: BTreeSet<&str> = [OVERRIDE_SPLIT.0, OVERRIDE_SPLIT.1].into();
    for i in 0..orgs.len() {
        let (name, _, _, kind, acronym) = ORGS[i];
        let canon = normalize_name(name);
        for cand in candidate_variants(name, kind, acronym) {
            if !rng.random_bool(0.5) {
                continue;
            }
            let norm = normalize_name(&cand);
            if first_token(&norm) != first_token(&canon) {
                continue;
            }
            if norm != canon && jaro_winkler(&norm, &canon) < 0.95 {
                continue;
            }
            if split.contains(name) && norm != canon {
                continue;
            }
            let clash = orgs.iter().enumerate().any(|(j, other)| {
                j != i
                    && other.country == orgs[i].country
                    && !(split.contains(name) && split.contains(other.name))
                    && other.aliases.iter().any(|a| {
                        let n = normalize_name(a);
                        first_token(&n) == first_token(&norm) && (n == norm || jaro_winkler(&n, &norm) >= 0.92)
                    })
            });
            if !clash && !orgs[i].aliases.contains(&cand) {
                orgs[i].aliases.push(cand);
            }
        }
    }
    let upf = orgs.iter_mut().find(|o| o.name == OVERRIDE_MERGE.1).unwrap();
    upf.aliases.push(OVERRIDE_MERGE.0.to_string());
    orgs
}

struct TextPlan {
    areas: Vec<usize>,
    theme: usize,
    sdg_phrases: Vec<String>,
}

fn capitalise(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn write_text(rng: &mut ChaCha8Rng, plan: &TextPlan) -> (String, String) {
    let pick = |rng: &mut ChaCha8Rng, list: &[&'static str], n: usize| -> Vec<&'static str> {
        (0..n).map(|_| *list.choose(rng).unwrap()).collect()
    };
    let mut title = Vec::new();
    if let Some(&a) = plan.areas.first() {
        title.extend(pick(rng, AREA_WORDS[a], 2));
    }
    title.extend(pick(rng, THEME_WORDS[plan.theme], 1));
    title.extend(pick(rng, &FILLER_WORDS, 2));
    title.shuffle(rng);
    let mut title = capitalise(&title.join(" "));
    if rng.random_bool(0.1) {
        title.push_str(", phase II");
    }

    let mut words: Vec<&str> = Vec::new();
    for (rank, &a) in plan.areas.iter().enumerate() {
        words.extend(pick(rng, AREA_WORDS[a], if rank == 0 { 9 } else { 5 }));
    }
    words.extend(pick(rng, THEME_WORDS[plan.theme], 6));
    words.extend(pick(rng, &FILLER_WORDS, 16));
    words.shuffle(rng);
    // Phrases go into distinct gaps that are never adjacent, so each one is
    // surrounded by ordinary words.
    let mut gaps: Vec<usize> = (1..words.len()).step_by(2).collect();
    gaps.shuffle(rng);
    let mut at: BTreeMap<usize, &str> = BTreeMap::new();
    for (phrase, gap) in plan.sdg_phrases.iter().zip(gaps) {
        at.insert(gap, phrase);
    }
    let mut chunks: Vec<String> = Vec::new();
    for (i, w) in words.iter().enumerate() {
        if let Some(p) = at.get(&i) {
            chunks.push(p.to_string());
        }
        chunks.push(w.to_string());
    }
    let mut sentences = Vec::new();
    let mut rest = chunks.as_slice();
    while !rest.is_empty() {
        let n = rng.random_range(7..12).min(rest.len());
        let (head, tail) = rest.split_at(n);
        let mut s = capitalise(&head.join(" "));
        if head.len() > 4 && rng.random_bool(0.3) {
            let cut = s.rfind(' ').unwrap();
            s.insert(cut, ',');
        }
        sentences.push(s + ".");
        rest = tail;
    }
    (title, sentences.join(" "))
}

/// Splits `total` cents over `n` parts with random weights; exact sum.
fn split_cents(rng: &mut ChaCha8Rng, total: i64, n: usize) -> Vec<i64> {
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let sum: f64 = weights.iter().sum();
    let mut parts: Vec<i64> = weights.iter().map(|w| (total as f64 * w / sum).floor() as i64).collect();
    let assigned: i64 = parts.iter().sum();
    parts[0] += total - assigned;
    parts
}

fn cents_str(c: i64) -> String {
    format!("{}.{:02}", c / 100, c % 100)
}

fn csv_string(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

fn sdg_plan(rng: &mut ChaCha8Rng, vocab: &SdgVocabulary) -> Vec<String> {
    let n = match rng.random_range(0..10) {
        0..=3 => 0,
        4..=7 => 1,
        _ => 2,
    };
    (0..n)
        .map(|_| vocab.entries().choose(rng).unwrap().phrase.clone())
        .collect()
}

fn area_plan(rng: &mut ChaCha8Rng) -> Vec<usize> {
    if rng.random_bool(0.1) {
        return Vec::new();
    }
    let primary = rng.random_range(0..7);
    let mut areas = vec![primary];
    if rng.random_bool(0.3) {
        let mut second = rng.random_range(0..6);
        if second >= primary {
            second += 1;
        }
        areas.push(second);
    }
    areas
}

impl Fixture {
    pub fn generate(config: &FixtureConfig) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let vocab = sdg_tagger::parse_vocabulary(SDG_VOCABULARY).expect("shipped vocabulary");
        let orgs = build_orgs(&mut rng);
        let home: Vec<usize> = (0..orgs.len()).filter(|&i| orgs[i].home()).collect();
        let away: Vec<usize> = (0..orgs.len()).filter(|&i| !orgs[i].home()).collect();
        // Activity skew: earlier organisations in each list take part more often.
        let weight = |rank: usize| 1.0 / (rank as f64 + 1.0).powf(0.7);
        let pick_org = |rng: &mut ChaCha8Rng, pool: &[usize], taken: &BTreeSet<usize>| -> usize {
            let free: Vec<(usize, usize)> = pool.iter().copied().enumerate().filter(|(_, o)| !taken.contains(o)).collect();
            free.choose_weighted(rng, |(rank, _)| weight(*rank)).unwrap().1
        };
        let mut emitted: Vec<BTreeSet<String>> = vec![BTreeSet::new(); orgs.len()];
        let alias_of = |rng: &mut ChaCha8Rng, o: usize, emitted: &mut Vec<BTreeSet<String>>| -> String {
            let spec = &orgs[o];
            let name = if spec.aliases.len() == 1 || rng.random_bool(0.55) {
                spec.aliases[0].clone()
            } else {
                spec.aliases[1..].choose(rng).unwrap().clone()
            };
            emitted[o].insert(name.clone());
            name
        };

        let mut truth = GroundTruth::default();
        let vet_budget = 5;
        let mut vet_used = 0;

        let mut eu_projects = vec![crate::ingest::EU_PROJECT_COLUMNS.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
        let mut eu_parts = vec![crate::ingest::EU_PARTICIPANT_COLUMNS.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
        let upf = orgs.iter().position(|o| o.name == OVERRIDE_MERGE.1).unwrap();
        for n in 0..config.n_eu {
            let raw_id = (800_000 + n * 37).to_string();
            let id = format!("EU:{raw_id}");
            let areas = area_plan(&mut rng);
            let theme = areas.first().map_or_else(|| rng.random_range(0..3), |&a| AREA_THEME[a]);
            let plan = TextPlan { areas: areas.clone(), theme, sdg_phrases: sdg_plan(&mut rng, &vocab) };
            let (title, objective) = write_text(&mut rng, &plan);
            let start = rng.random_range(2014..=2022);
            let end = start + rng.random_range(1..=4);
            let mut tags: BTreeSet<String> = BTreeSet::new();
            let (programme, topic, instrument) = match areas.first() {
                Some(&a) => {
                    let mut code = a;
                    let mut vet = false;
                    if a == 0 && vet_used < vet_budget && rng.random_bool(0.3) {
                        code = 4;
                        vet = true;
                        vet_used += 1;
                    } else if rng.random_bool(0.06) {
                        code = (a + rng.random_range(1..7)) % 7;
                    }
                    if vet {
                        tags.insert(VETERINARY_TAG.to_string());
                        tags.insert(format!("EC:{}", PRIORITY_AREAS[a]));
                    }
                    let (prog, topic, _) = AREA_CODES[code];
                    let instrument = ["RIA", "IA", "CSA"].choose(&mut rng).unwrap().to_string();
                    (
                        format!("{prog}-{start}"),
                        format!("{topic}-{:02}-{start}", rng.random_range(1..30)),
                        instrument,
                    )
                }
                None => {
                    let (prog, topic, instr) = *EU_GENERIC_PROGRAMMES.choose(&mut rng).unwrap();
                    (format!("{prog}-{start}"), format!("{topic}-{start}"), instr.to_string())
                }
            };
            if let Some(&second) = areas.get(1) {
                if rng.random_bool(0.7) {
                    tags.insert(format!("EC:{}", PRIORITY_AREAS[second]));
                }
            }
            let total = rng.random_range(50_000_000..800_000_000i64);
            let funder = (total as f64 * rng.random_range(0.6..1.0)).round() as i64;

            let n_home = rng.random_range(1..=3);
            let n_away = rng.random_range(1..=4);
            let mut taken = BTreeSet::new();
            let mut members = Vec::new();
            for _ in 0..n_home {
                let o = pick_org(&mut rng, &home, &taken);
                taken.insert(o);
                members.push(o);
            }
            for _ in 0..n_away {
                let o = pick_org(&mut rng, &away, &taken);
                taken.insert(o);
                members.push(o);
            }
            if n % 25 == 3 && !taken.contains(&upf) {
                members[0] = upf;
            }
            if !rng.random_bool(0.6) {
                let k = members.len() - 1;
                members.swap(0, k);
            }
            let shares = split_cents(&mut rng, funder, members.len());
            for (k, (&o, share)) in members.iter().zip(shares).enumerate() {
                let name = if o == upf && n % 25 == 3 {
                    emitted[o].insert(OVERRIDE_MERGE.0.to_string());
                    OVERRIDE_MERGE.0.to_string()
                } else {
                    alias_of(&mut rng, o, &mut emitted)
                };
                eu_parts.push(vec![
                    raw_id.clone(),
                    name,
                    orgs[o].country.to_string(),
                    if k == 0 { "coordinator" } else { "participant" }.to_string(),
                    cents_str(share),
                    orgs[o].kind.activity_code().to_string(),
                ]);
            }
            eu_projects.push(vec![
                raw_id,
                format!("EUP{n:03}"),
                title,
                objective,
                programme,
                instrument,
                topic,
                format!("{start}-{:02}-01", rng.random_range(1..=12)),
                format!("{end}-{:02}-28", rng.random_range(1..=12)),
                cents_str(total),
                cents_str(funder),
                tags.into_iter().collect::<Vec<_>>().join(";"),
            ]);
            truth.areas.insert(id.clone(), areas.iter().map(|&a| PRIORITY_AREAS[a].to_string()).collect());
            truth.themes.insert(id.clone(), theme);
            truth.sdgs.insert(id, planted_sdgs(&vocab, &plan.sdg_phrases));
        }

        let mut regional = vec![crate::ingest::REGIONAL_COLUMNS.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
        for n in 0..config.n_regional {
            let raw_id = format!("CAT-{:04}", 1 + n * 3);
            let id = format!("REG:{raw_id}");
            let areas = area_plan(&mut rng);
            let theme = areas.first().map_or_else(|| rng.random_range(0..3), |&a| AREA_THEME[a]);
            let plan = TextPlan { areas: areas.clone(), theme, sdg_phrases: sdg_plan(&mut rng, &vocab) };
            let (title, abstract_text) = write_text(&mut rng, &plan);
            let start = rng.random_range(2015..=2022);
            let end = start + rng.random_range(1..=3);
            let programme = match areas.first() {
                Some(&a) if rng.random_bool(0.85) => {
                    let code = if rng.random_bool(0.06) { (a + rng.random_range(1..7)) % 7 } else { a };
                    format!("S3CAT-{}-{start}", AREA_CODES[code].2)
                }
                _ => format!("FEDER-RDI-{start}"),
            };
            let instrument = ["Subvenció", "Préstec", "Compra pública"].choose(&mut rng).unwrap().to_string();
            let total = rng.random_range(5_000_000..150_000_000i64);
            let grant = (total as f64 * rng.random_range(0.3..0.6)).round() as i64;
            let mut members = vec![home[n % home.len()]];
            let mut taken: BTreeSet<usize> = members.iter().copied().collect();
            for _ in 0..rng.random_range(0..=3) {
                let o = pick_org(&mut rng, &home, &taken);
                taken.insert(o);
                members.push(o);
            }
            let shares = split_cents(&mut rng, grant, members.len());
            let start_date = format!("{start}-{:02}-15", rng.random_range(1..=12));
            let end_date = format!("{end}-{:02}-15", rng.random_range(1..=12));
            for (k, (&o, share)) in members.iter().zip(shares).enumerate() {
                let name = alias_of(&mut rng, o, &mut emitted);
                regional.push(vec![
                    raw_id.clone(),
                    format!("RIS{n:03}"),
                    title.clone(),
                    abstract_text.clone(),
                    programme.clone(),
                    instrument.clone(),
                    start_date.clone(),
                    end_date.clone(),
                    cents_str(total),
                    cents_str(grant),
                    name,
                    orgs[o].kind.regional_label().to_string(),
                    orgs[o].province.to_string(),
                    orgs[o].country.to_string(),
                    if k == 0 { "coordinator" } else { "beneficiary" }.to_string(),
                    cents_str(share),
                ]);
            }
            truth.areas.insert(id.clone(), areas.iter().map(|&a| PRIORITY_AREAS[a].to_string()).collect());
            truth.themes.insert(id.clone(), theme);
            truth.sdgs.insert(id, planted_sdgs(&vocab, &plan.sdg_phrases));
        }

        truth.alias_groups = orgs
            .iter()
            .zip(&emitted)
            .filter(|(_, names)| !names.is_empty())
            .map(|(o, names)| AliasGroup {
                canonical: o.name.to_string(),
                country: o.country.to_string(),
                home: o.home(),
                names: names.clone(),
            })
            .collect();

        let gold_b = noisy_copy(&mut rng, &truth.areas, 0.03);
        Fixture {
            eu_projects_csv: csv_string(eu_projects),
            eu_participants_csv: csv_string(eu_parts),
            regional_csv: csv_string(regional),
            rules_csv: rules_csv(),
            overrides_csv: csv_string(vec![
                vec!["nameA".into(), "nameB".into(), "action".into()],
                vec![OVERRIDE_MERGE.0.into(), OVERRIDE_MERGE.1.into(), "merge".into()],
                vec![OVERRIDE_SPLIT.0.into(), OVERRIDE_SPLIT.1.into(), "split".into()],
            ]),
            topic_labels_csv: "topicId,label\n4,Precision agriculture\n".into(),
            gold_a_csv: gold_csv(&truth.areas),
            gold_b_csv: gold_csv(&gold_b),
            truth,
        }
    }

    /// Writes inputs, configuration files, ground truth and a pipeline
    /// `config.json` (with a `run` output directory) under `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<FixturePaths> {
        let inputs = dir.join("inputs");
        let conf = dir.join("config");
        std::fs::create_dir_all(&inputs)?;
        std::fs::create_dir_all(&conf)?;
        let files: [(&Path, &str, &str); 10] = [
            (&inputs, "eu_projects.csv", &self.eu_projects_csv),
            (&inputs, "eu_participants.csv", &self.eu_participants_csv),
            (&inputs, "regional_projects.csv", &self.regional_csv),
            (&conf, "sdg_vocabulary.csv", SDG_VOCABULARY),
            (&conf, "priority_rules.csv", &self.rules_csv),
            (&conf, "org_overrides.csv", &self.overrides_csv),
            (&conf, "topic_labels.csv", &self.topic_labels_csv),
            (&conf, "gold_a.csv", &self.gold_a_csv),
            (&conf, "gold_b.csv", &self.gold_b_csv),
            (dir, "truth.json", ""),
        ];
        for (base, name, body) in files {
            if name == "truth.json" {
                let json = serde_json::to_vec_pretty(&self.truth).map_err(std::io::Error::other)?;
                std::fs::write(base.join(name), json)?;
            } else {
                std::fs::write(base.join(name), body)?;
            }
        }
        let config = PipelineConfig::for_fixture();
        let json = serde_json::to_vec_pretty(&config).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("config.json"), json)?;
        Ok(FixturePaths {
            root: dir.to_path_buf(),
            config: dir.join("config.json"),
            eu_projects: inputs.join("eu_projects.csv"),
            eu_participants: inputs.join("eu_participants.csv"),
            regional: inputs.join("regional_projects.csv"),
            truth: dir.join("truth.json"),
        })
    }
}

fn planted_sdgs(vocab: &SdgVocabulary, phrases: &[String]) -> BTreeSet<u8> {
    // A planted phrase may contain a shorter vocabulary phrase of another
    // goal, so the truth is whatever the phrase itself matches.
    phrases
        .iter()
        .flat_map(|p| vocab.tag_text(p).into_iter().map(|m| m.sdg))
        .collect()
}

fn rules_csv() -> String {
    let mut rows = vec![vec!["area".to_string(), "field".into(), "pattern".into(), "polarity".into()]];
    for (a, (prog, topic, regional)) in AREA_CODES.iter().enumerate() {
        let area = PRIORITY_AREAS[a].to_string();
        rows.push(vec![area.clone(), "PROGRAMME".into(), format!("{prog}-*"), "POSITIVE".into()]);
        rows.push(vec![area.clone(), "PROGRAMME".into(), format!("S3CAT-{regional}-*"), "POSITIVE".into()]);
        rows.push(vec![area.clone(), "METADATA_TAG".into(), format!("EC:{area}"), "POSITIVE".into()]);
        if a == 5 {
            rows.push(vec![area.clone(), "TOPIC_CODE".into(), format!("re:({topic}|FOF)-[0-9]+-20[0-9]{{2}}"), "POSITIVE".into()]);
        }
    }
    rows.push(vec!["HEALTH".into(), "METADATA_TAG".into(), VETERINARY_TAG.into(), "NEGATIVE".into()]);
    csv_string(rows)
}

fn gold_csv(labels: &BTreeMap<String, BTreeSet<String>>) -> String {
    let mut rows = vec![vec!["projectId".to_string(), "area".into()]];
    for (id, set) in labels {
        if set.is_empty() {
            rows.push(vec![id.clone(), String::new()]);
        }
        for a in set {
            rows.push(vec![id.clone(), a.clone()]);
        }
    }
    csv_string(rows)
}

/// Second annotator: each (project, label) decision flips with probability `p`.
fn noisy_copy(
    rng: &mut ChaCha8Rng,
    labels: &BTreeMap<String, BTreeSet<String>>,
    p: f64,
) -> BTreeMap<String, BTreeSet<String>> {
    labels
        .iter()
        .map(|(id, set)| {
            let mut out = set.clone();
            for area in PRIORITY_AREAS {
                if rng.random_bool(p) && !out.remove(area) {
                    out.insert(area.to_string());
                }
            }
            (id.clone(), out)
        })
        .collect()
}

/// A corpus whose label sets are exactly recoverable: every project carries
/// `EC:<AREA>` tags for its areas and its text is drawn only from those
/// areas' word lists plus shared filler.
#[derive(Debug, Clone)]
pub struct SeparableCorpus {
    pub corpus: crate::ingest::Corpus,
    pub rules_csv: String,
    pub truth: BTreeMap<String, BTreeSet<String>>,
}

pub fn separable_corpus(n: usize, seed: u64) -> SeparableCorpus {
    use crate::ingest::{Corpus, EnrichmentTags, Project, Source};
    use crate::money::Eur;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut projects = Vec::with_capacity(n);
    let mut truth = BTreeMap::new();
    for i in 0..n {
        let mut areas = vec![i % 7];
        if rng.random_bool(0.3) {
            areas.push((i % 7 + rng.random_range(1..7)) % 7);
        }
        let mut words: Vec<&str> = Vec::new();
        for &a in &areas {
            words.extend((0..10).map(|_| *AREA_WORDS[a].choose(&mut rng).unwrap()));
        }
        words.extend((0..6).map(|_| *FILLER_WORDS.choose(&mut rng).unwrap()));
        words.shuffle(&mut rng);
        let id = format!("EU:{}", 900_000 + i);
        let names: BTreeSet<String> = areas.iter().map(|&a| PRIORITY_AREAS[a].to_string()).collect();
        projects.push(Project {
            project_id: id.clone(),
            source: Source::EuFp,
            acronym: format!("SYN{i}"),
            title: words[..4].join(" "),
            abstract_text: words[4..].join(" "),
            programme: "H2020".into(),
            instrument: "RIA".into(),
            call_topic_code: String::new(),
            start_year: 2020,
            end_year: 2022,
            total_cost: Eur::from_euros(100_000),
            funder_contribution: Eur::from_euros(100_000),
            metadata_tags: names.iter().map(|a| format!("EC:{a}")).collect(),
            enrichment: EnrichmentTags::default(),
        });
        truth.insert(id, names);
    }
    let mut rows = vec![vec!["area".to_string(), "field".into(), "pattern".into(), "polarity".into()]];
    for area in PRIORITY_AREAS {
        rows.push(vec![area.into(), "METADATA_TAG".into(), format!("EC:{area}"), "POSITIVE".into()]);
    }
    SeparableCorpus {
        corpus: Corpus {
            projects,
            participations: Vec::new(),
        },
        rules_csv: csv_string(rows),
        truth,
    }
}

/// Tokens generated outside planted phrases. Used by tests to check that no
/// SDG phrase can appear by accident.
pub fn generator_words() -> BTreeSet<&'static str> {
    AREA_WORDS
        .iter()
        .chain(THEME_WORDS.iter())
        .flat_map(|l| l.iter().copied())
        .chain(FILLER_WORDS)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_words_never_form_sdg_phrases() {
        let vocab = sdg_tagger::parse_vocabulary(SDG_VOCABULARY).unwrap();
        let vocab_tokens: BTreeSet<String> = vocab
            .entries()
            .iter()
            .flat_map(|e| e.phrase.split(' ').map(|t| t.to_lowercase()))
            .collect();
        for w in generator_words() {
            assert!(!vocab_tokens.contains(w), "{w} is a vocabulary token");
        }
    }

    #[test]
    fn area_words_are_disjoint() {
        let mut seen = BTreeSet::new();
        for list in AREA_WORDS.iter().chain(THEME_WORDS.iter()) {
            for w in list.iter() {
                assert!(seen.insert(*w), "{w} repeated");
            }
        }
        for w in FILLER_WORDS {
            assert!(seen.insert(w), "{w} repeated");
        }
    }

    #[test]
    fn distinct_organisations_stay_below_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let orgs = build_orgs(&mut rng);
        let split: BTreeSet<&str> = [OVERRIDE_SPLIT.0, OVERRIDE_SPLIT.1].into();
        for (i, a) in orgs.iter().enumerate() {
            for b in &orgs[i + 1..] {
                if a.country != b.country || (split.contains(a.name) && split.contains(b.name)) {
                    continue;
                }
                for x in &a.aliases {
                    for y in &b.aliases {
                        let (nx, ny) = (normalize_name(x), normalize_name(y));
                        if first_token(&nx) == first_token(&ny) {
                            assert!(nx != ny && jaro_winkler(&nx, &ny) < 0.93, "{x} ~ {y}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = Fixture::generate(&FixtureConfig::default());
        let b = Fixture::generate(&FixtureConfig::default());
        assert_eq!(a.eu_projects_csv, b.eu_projects_csv);
        assert_eq!(a.regional_csv, b.regional_csv);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.truth.areas.len(), 500);
        let c = Fixture::generate(&FixtureConfig { seed: 9, ..Default::default() });
        assert_ne!(a.eu_projects_csv, c.eu_projects_csv);
    }
    #[test]
    fn inputs_parse_without_rejects_and_tags_match_plants() {
        let fx = Fixture::generate(&FixtureConfig::default());
        let eu = crate::ingest::parse_eu_str(&fx.eu_projects_csv, &fx.eu_participants_csv, "p", "q").unwrap();
        let reg = crate::ingest::parse_regional_str(&fx.regional_csv, "r").unwrap();
        assert_eq!(eu.report.total_rejects() + reg.report.total_rejects(), 0);
        let corpus = crate::ingest::unify(eu.records, reg.records);
        assert_eq!(corpus.projects.len(), 500);
        let vocab = sdg_tagger::parse_vocabulary(SDG_VOCABULARY).unwrap();
        for (id, matches) in sdg_tagger::tag_corpus(&corpus, &vocab) {
            let found: BTreeSet<u8> = matches.iter().map(|m| m.sdg).collect();
            assert_eq!(found, fx.truth.sdgs[&id], "{id}");
        }
        let home = corpus.participations.iter().filter(|p| !p.province.is_empty()).count();
        assert!(home > 0);
    }
    #[test]
    fn separable_corpus_is_learned() {
        use crate::priority_classifier as pc;
        let sc = separable_corpus(350, 5);
        let labels = priority_labels();
        let rules = pc::parse_rules(&sc.rules_csv, &labels, "rules").unwrap();
        let weak = pc::weak_label(&sc.corpus, &rules).unwrap();
        assert_eq!(weak, sc.truth);
        let cfg = crate::text_embedding::TfidfConfig::default();
        let (_, emb) = crate::text_embedding::embed_corpus(&sc.corpus, &cfg, 128, 42).unwrap();
        let model = pc::train(&emb, &weak, &labels, &pc::TrainConfig::default()).unwrap();
        let preds = pc::label_sets(&pc::predict(&model, &emb));
        let report = pc::evaluate(&preds, &sc.truth, None, &labels).unwrap();
        assert!(report.macro_f1 >= 0.95, "{}", report.macro_f1);
    }
}
