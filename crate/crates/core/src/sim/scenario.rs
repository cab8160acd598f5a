use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::model::{
    severity_of, Audiogram, SceneClass, SceneVector, Severity, StrategyBook, StrategyTemplate, Subproblem,
    CONTEXT_SLOT_LOUDNESS, CONTEXT_SLOT_TYPE, FREQUENCIES_HZ, MAX_THRESHOLD_DB, MIN_THRESHOLD_DB,
};

/// Per-band threshold distribution for one severity class, in dB HL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandNormal {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub inconsistency_rate: f64,
    /// Probability that the scene matches the subproblem's typical scene.
    pub scene_bias: f64,
    pub mild: BandNormal,
    pub moderate: BandNormal,
    pub severe: BandNormal,
    /// Added per band step above 2 kHz.
    pub tilt_db_per_band: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            inconsistency_rate: 0.0,
            scene_bias: 0.7,
            mild: BandNormal { mean: 33.0, sd: 5.0 },
            moderate: BandNormal { mean: 48.0, sd: 5.0 },
            severe: BandNormal { mean: 70.0, sd: 8.0 },
            tilt_db_per_band: 3.0,
        }
    }
}

impl GeneratorConfig {
    pub fn with_inconsistency(mut self, rate: f64) -> Self {
        self.inconsistency_rate = rate;
        self
    }

    fn band(&self, severity: Severity) -> BandNormal {
        match severity {
            Severity::Mild => self.mild,
            Severity::Moderate => self.moderate,
            Severity::Severe => self.severe,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub index: usize,
    pub seed: u64,
    pub audiogram: Audiogram,
    pub severity: Severity,
    pub subproblem: Subproblem,
    pub complaint: String,
    /// Ground-truth answers, including the two context questions.
    pub hidden_answers: BTreeMap<String, String>,
    pub scene: SceneVector,
    pub inconsistency_rate: f64,
}

const COMPLAINTS: [(Subproblem, &[&str]); 6] = [
    (
        Subproblem::Noise,
        &[
            "Background noise makes it hard to follow my friends at dinner.",
            "The crowd chatter drowns out the person next to me.",
            "Traffic noise on my walk covers up everything my wife says.",
        ],
    ),
    (
        Subproblem::Distortion,
        &[
            "Voices sound echoey and hollow.",
            "Music sounds tinny and harsh through the aids.",
            "Everything sounds robotic since my last appointment.",
        ],
    ),
    (
        Subproblem::Clarity,
        &[
            "I can't understand my grandson when he talks.",
            "Speech sounds muffled at church.",
            "People seem to mumble and I miss half the words.",
        ],
    ),
    (
        Subproblem::Loudness,
        &[
            "Everything is too loud in the kitchen.",
            "The television is too quiet even at full volume.",
            "Slamming doors are too loud for me.",
        ],
    ),
    (
        Subproblem::BlockedEars,
        &[
            "My ears feel blocked when I wear the aids.",
            "My own voice booms like I am inside a barrel.",
            "There is pressure in my ear all day.",
        ],
    ),
    (
        Subproblem::Howl,
        &[
            "There's a whistling squeal near my ear.",
            "It howls when I hug my granddaughter.",
            "I get a feedback screech when I use the phone.",
        ],
    ),
];

pub fn complaints_for(subproblem: Subproblem) -> &'static [&'static str] {
    COMPLAINTS.iter().find(|(s, _)| *s == subproblem).map(|(_, c)| *c).unwrap_or(&[])
}

/// The scene a complaint type is most often reported in.
pub fn typical_scene(subproblem: Subproblem) -> SceneClass {
    match subproblem {
        Subproblem::Noise | Subproblem::Loudness => SceneClass::Noise,
        Subproblem::Clarity | Subproblem::Distortion => SceneClass::Conversation,
        Subproblem::BlockedEars | Subproblem::Howl => SceneClass::Quiet,
    }
}

/// How a persona answers the context questions for a given scene.
pub fn context_answers(scene: SceneClass) -> [(&'static str, &'static str); 2] {
    let loudness = match scene {
        SceneClass::Conversation => "moderate",
        SceneClass::Noise => "loud",
        SceneClass::Quiet => "soft",
    };
    [(CONTEXT_SLOT_TYPE, scene.as_str()), (CONTEXT_SLOT_LOUDNESS, loudness)]
}

pub(crate) fn scenario_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn sample_audiogram(rng: &mut ChaCha8Rng, severity: Severity, cfg: &GeneratorConfig) -> Audiogram {
    let band = cfg.band(severity);
    let normal = Normal::new(band.mean, band.sd).expect("finite sd");
    loop {
        let mut t = [0.0; 8];
        for (i, hz) in FREQUENCIES_HZ.iter().enumerate() {
            let steps_above_2k = FREQUENCIES_HZ.iter().filter(|&&f| f > 2000 && f <= *hz).count() as f64;
            t[i] = (normal.sample(rng) + cfg.tilt_db_per_band * steps_above_2k).clamp(MIN_THRESHOLD_DB, MAX_THRESHOLD_DB);
        }
        let a = Audiogram::new(t).expect("clamped thresholds are valid");
        if severity_of(&a) == severity {
            return a;
        }
    }
}

/// Uniform over the template's allowed values, rejecting draws that break a rule.
pub fn sample_consistent_answers(rng: &mut ChaCha8Rng, template: &StrategyTemplate, max_attempts: usize) -> Option<BTreeMap<String, String>> {
    for _ in 0..max_attempts {
        let answers: BTreeMap<String, String> = template
            .slots
            .iter()
            .map(|s| (s.id.clone(), s.allowed.choose(rng).expect("non-empty allowed").clone()))
            .collect();
        let lookup = |slot: &str| answers.get(slot).map(String::as_str);
        if template.rules.iter().all(|r| r.predicate.eval(&lookup)) {
            return Some(answers);
        }
    }
    None
}

fn sample_scene(rng: &mut ChaCha8Rng, subproblem: Subproblem, bias: f64) -> SceneVector {
    let typical = typical_scene(subproblem);
    let dominant = if rng.gen::<f64>() < bias {
        typical
    } else {
        let others: Vec<SceneClass> = SceneClass::ALL.into_iter().filter(|c| *c != typical).collect();
        *others.choose(rng).expect("two alternatives")
    };
    let top = rng.gen_range(0.6..0.9);
    let split = rng.gen::<f64>();
    let mut p = [0.0; 3];
    let mut rest = [(1.0 - top) * split, (1.0 - top) * (1.0 - split)].into_iter();
    for c in SceneClass::ALL {
        p[c.index()] = if c == dominant { top } else { rest.next().unwrap_or(0.0) };
    }
    SceneVector::new(p, 975).expect("posteriors sum to one")
}

/// Deterministic scenario list; subproblems cycle round-robin.
pub fn generate_scenarios(n: usize, seed: u64, book: &StrategyBook, cfg: &GeneratorConfig) -> Vec<Scenario> {
    (0..n)
        .map(|index| {
            let s_seed = scenario_seed(seed, index);
            let mut rng = ChaCha8Rng::seed_from_u64(s_seed);
            let subproblem = Subproblem::ALL[index % Subproblem::ALL.len()];
            let severity = *Severity::ALL.choose(&mut rng).expect("three classes");
            let audiogram = sample_audiogram(&mut rng, severity, cfg);
            let complaint = complaints_for(subproblem).choose(&mut rng).copied().unwrap_or("It does not sound right.");
            let mut hidden_answers = match book.get(subproblem) {
                Some(t) => sample_consistent_answers(&mut rng, t, 100_000).unwrap_or_default(),
                None => BTreeMap::new(),
            };
            let scene = sample_scene(&mut rng, subproblem, cfg.scene_bias);
            for (slot, value) in context_answers(scene.dominant()) {
                hidden_answers.entry(slot.to_string()).or_insert_with(|| value.to_string());
            }
            Scenario {
                index,
                seed: s_seed,
                audiogram,
                severity,
                subproblem,
                complaint: complaint.to_string(),
                hidden_answers,
                scene,
                inconsistency_rate: cfg.inconsistency_rate,
            }
        })
        .collect()
}
