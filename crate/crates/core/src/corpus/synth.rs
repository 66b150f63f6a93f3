//! Deterministic synthetic helpdesk dialogues.
//!
//! Each dialogue follows one scenario script. The user names a product in the
//! first turn and often an error code a few turns later; agent responses at
//! later turns refer back to those slots (download links keyed by product,
//! fix links keyed by error code), so producing them requires carrying
//! context across turns. Every agent step has a generic variant that is the
//! single most likely response and rarer specific variants carrying slot
//! tokens with high inverse document frequency.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RawDialogue, RawTurn};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub min_turns: usize,
    pub max_turns: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            min_turns: 1,
            max_turns: 8,
        }
    }
}

pub const PRODUCTS: [&str; 12] = [
    "office",
    "windows",
    "outlook",
    "excel",
    "powerpoint",
    "onenote",
    "onedrive",
    "teams",
    "skype",
    "visio",
    "publisher",
    "sharepoint",
];
pub const VERSIONS: [&str; 6] = ["2010", "2013", "2016", "2019", "2021", "365"];
pub const AGENTS: [&str; 8] = [
    "alex", "sam", "jordan", "taylor", "morgan", "casey", "riley", "jamie",
];
const N_CODES: usize = 40;

pub fn error_code(k: usize) -> String {
    format!("0x{:08x}", 0x8007_0005u32 + (k as u32) * 0x1f3)
}

pub fn code_url(k: usize) -> String {
    format!("support.contoso.com/kb{}", 4021 + k * 37)
}

pub fn product_url(p: &str) -> String {
    format!("aka.ms/get-{p}")
}

struct Step {
    user: &'static [&'static str],
    agent: &'static [(f64, &'static str)],
}

struct Scenario {
    intro: &'static [&'static str],
    steps: [Step; 6],
}

const GREETING: &[(f64, &str)] = &[
    (0.5, "hello , my name is {agent} . i will be glad to help you with that ."),
    (0.3, "hello , my name is {agent} . i can help you with {product} {version} ."),
    (0.2, "hi , thank you for contacting contoso support . i understand you have an issue with {product} ."),
];

const CLOSING: Step = Step {
    user: &[
        "no , that is all . thanks",
        "nothing else , thank you",
        "that is it . bye",
    ],
    agent: &[
        (
            0.6,
            "thank you for contacting contoso support . have a great day !",
        ),
        (0.4, "you are welcome . goodbye !"),
    ],
};

const SCENARIOS: [Scenario; 8] = [
    // install
    Scenario {
        intro: &["i need help installing {product} {version}", "i can not install {product} {version} on my computer"],
        steps: [
            Step {
                user: &["i bought it last week", "i already paid for it"],
                agent: &[
                    (0.5, "ok , let me check that for you ."),
                    (0.5, "may i have the email address on your account ?"),
                ],
            },
            Step {
                user: &["sure , it is the one i use for everything", "it is my work email"],
                agent: &[
                    (0.45, "thank you for waiting ."),
                    (0.55, "thank you . please download {product} from {product_url} and sign in ."),
                ],
            },
            Step {
                user: &["the installer fails with error {code}", "i see error {code} during setup"],
                agent: &[
                    (0.5, "i am sorry to hear that . let me check ."),
                    (0.5, "error {code} means an older version is still installed ."),
                ],
            },
            Step {
                user: &["what should i do ?", "how do i fix it ?"],
                agent: &[
                    (0.45, "please wait a moment while i check ."),
                    (0.55, "please run the removal tool for error {code} at {code_url} and restart ."),
                ],
            },
            Step {
                user: &["ok , it worked", "done , the tool finished"],
                agent: &[
                    (0.5, "great ! is there anything else i can help you with ?"),
                    (0.5, "great ! now install {product} again from {product_url} ."),
                ],
            },
            Step {
                user: &["it is installed now", "everything works now"],
                agent: &[(1.0, "i am glad it works . is there anything else i can help you with ?")],
            },
        ],
    },
    // activation
    Scenario {
        intro: &["{product} {version} says it is not activated", "i can not activate {product} {version}"],
        steps: [
            Step {
                user: &["i have a product key", "i entered my key already"],
                agent: &[
                    (0.5, "ok , let me check that for you ."),
                    (0.5, "may i have the product key please ?"),
                ],
            },
            Step {
                user: &["here it is", "i will read it to you"],
                agent: &[
                    (0.5, "thank you for waiting ."),
                    (0.5, "thank you . the key is valid for {product} {version} ."),
                ],
            },
            Step {
                user: &["activation shows error {code}", "it says error {code}"],
                agent: &[
                    (0.5, "i am sorry to hear that . let me check ."),
                    (0.5, "error {code} means the activation server could not be reached ."),
                ],
            },
            Step {
                user: &["what can i do ?", "is there a fix ?"],
                agent: &[
                    (0.45, "please wait a moment while i check ."),
                    (0.55, "please follow the steps for error {code} at {code_url} ."),
                ],
            },
            Step {
                user: &["it is activated now", "that fixed it"],
                agent: &[
                    (0.5, "great ! is there anything else i can help you with ?"),
                    (0.5, "great ! {product} is now activated on your account ."),
                ],
            },
            Step {
                user: &["thanks a lot", "thank you so much"],
                agent: &[(1.0, "you are welcome . is there anything else i can help you with ?")],
            },
        ],
    },
    // update failure
    Scenario {
        intro: &["my {product} {version} update keeps failing", "{product} {version} will not update"],
        steps: [
            Step {
                user: &["it has been like this for days", "it started yesterday"],
                agent: &[
                    (0.5, "i am sorry to hear that . let me check ."),
                    (0.5, "do you see an error code when the {product} update fails ?"),
                ],
            },
            Step {
                user: &["yes , error {code}", "it shows error {code}"],
                agent: &[
                    (0.5, "thank you for waiting ."),
                    (0.5, "error {code} means the update files are damaged ."),
                ],
            },
            Step {
                user: &["how do i repair it ?", "what should i do ?"],
                agent: &[
                    (0.45, "please wait a moment while i check ."),
                    (0.55, "please download the repair tool for error {code} from {code_url} ."),
                ],
            },
            Step {
                user: &["i ran it", "the tool is done"],
                agent: &[
                    (0.5, "ok , let me check that for you ."),
                    (0.5, "now please restart and run the {product} update again ."),
                ],
            },
            Step {
                user: &["the update worked", "it is updated now"],
                agent: &[
                    (0.5, "great ! is there anything else i can help you with ?"),
                    (0.5, "great ! {product} {version} is now up to date ."),
                ],
            },
            Step {
                user: &["great , thanks", "perfect"],
                agent: &[(1.0, "you are welcome . is there anything else i can help you with ?")],
            },
        ],
    },
    // password reset
    Scenario {
        intro: &["i forgot my password for {product}", "i can not sign in to {product}"],
        steps: [
            Step {
                user: &["i tried many times", "it keeps saying wrong password"],
                agent: &[
                    (0.5, "ok , let me check that for you ."),
                    (0.5, "may i have the email address on your account ?"),
                ],
            },
            Step {
                user: &["it is my personal email", "the one i always use"],
                agent: &[
                    (0.5, "thank you for waiting ."),
                    (0.5, "thank you . you can reset the password at aka.ms/reset-password ."),
                ],
            },
            Step {
                user: &["it shows error {code}", "i get error {code} on that page"],
                agent: &[
                    (0.5, "i am sorry to hear that . let me check ."),
                    (0.5, "error {code} means the account is locked ."),
                ],
            },
            Step {
                user: &["how do i unlock it ?", "what now ?"],
                agent: &[
                    (0.45, "please wait a moment while i check ."),
                    (0.55, "please verify your identity for error {code} at {code_url} ."),
                ],
            },
            Step {
                user: &["i can sign in now", "it works"],
                agent: &[
                    (0.5, "great ! is there anything else i can help you with ?"),
                    (0.5, "great ! you can now use {product} again ."),
                ],
            },
            Step {
                user: &["thanks", "thank you"],
                agent: &[(1.0, "you are welcome . is there anything else i can help you with ?")],
            },
        ],
    },
    // mail sync
    Scenario {
        intro: &["{product} {version} does not sync my mail", "my mail is not syncing in {product} {version}"],
        steps: [
            Step {
                user: &["new messages do not show up", "nothing arrives since monday"],
                agent: &[
                    (0.5, "i am sorry to hear that . let me check ."),
                    (0.5, "is your {product} connected to the internet ?"),
                ],
            },
            Step {
                user: &["yes , the internet works", "yes , other sites load fine"],
                agent: &[
                    (0.5, "ok , let me check that for you ."),
                    (0.5, "please open the {product} account settings and remove the account ."),
                ],
            },
            Step {
                user: &["now it says error {code}", "i got error {code}"],
                agent: &[
                    (0.5, "thank you for waiting ."),
                    (0.5, "error {code} means the mail profile is damaged ."),
                ],
            },
            Step {
                user: &["can you fix it ?", "what should i do ?"],
                agent: &[
                    (0.45, "please wait a moment while i check ."),
                    (0.55, "please create a new profile using the guide for error {code} at {code_url} ."),
                ],
            },
            Step {
                user: &["the mail is back", "it syncs now"],
                agent: &[
                    (0.5, "great ! is there anything else i can help you with ?"),
                    (0.5, "great ! your mail should now sync in {product} ."),
                ],
            },
            Step {
                user: &["thank you", "that is great"],
                agent: &[(1.0, "you are welcome . is there anything else i can help you with ?")],
            },
        ],
    },
    // slow computer
    Scenario {
        intro: &["{product} {version} is very slow", "{product} {version} keeps freezing"],
        steps: [
            Step {
                user: &["it takes minutes to open", "it hangs all the time"],
                agent: &[
                    (0.5, "i am sorry to hear that . let me check ."),
                    (0.5, "how much free disk space do you have ?"),
                ],
            },
            Step {
                user: &["about ten gigabytes", "plenty i think"],
                agent: &[
                    (0.5, "ok , let me check that for you ."),
                    (0.5, "please disable add-ins in {product} and restart it ."),
                ],
            },
            Step {
                user: &["it crashed with error {code}", "now error {code} appears"],
                agent: &[
                    (0.5, "thank you for waiting ."),
                    (0.5, "error {code} means an add-in is not compatible with {version} ."),
                ],
            },
            Step {
                user: &["what should i do ?", "how can i fix this ?"],
                agent: &[
                    (0.45, "please wait a moment while i check ."),
                    (0.55, "please install the compatibility update for error {code} from {code_url} ."),
                ],
            },
            Step {
                user: &["it is faster now", "no more freezing"],
                agent: &[
                    (0.5, "great ! is there anything else i can help you with ?"),
                    (0.5, "great ! {product} should run normally now ."),
                ],
            },
            Step {
                user: &["thanks", "awesome"],
                agent: &[(1.0, "you are welcome . is there anything else i can help you with ?")],
            },
        ],
    },
    // refund
    Scenario {
        intro: &["i want a refund for {product} {version}", "i was charged twice for {product} {version}"],
        steps: [
            Step {
                user: &["i bought it by mistake", "the charge is wrong"],
                agent: &[
                    (0.5, "ok , let me check that for you ."),
                    (0.5, "may i have the order number please ?"),
                ],
            },
            Step {
                user: &["i do not have it", "i can not find it"],
                agent: &[
                    (0.5, "thank you for waiting ."),
                    (0.5, "you can find the order number at aka.ms/order-history ."),
                ],
            },
            Step {
                user: &["the page shows error {code}", "i get error {code} there"],
                agent: &[
                    (0.5, "i am sorry to hear that . let me check ."),
                    (0.5, "error {code} means your billing session expired ."),
                ],
            },
            Step {
                user: &["so what now ?", "can you still help ?"],
                agent: &[
                    (0.45, "please wait a moment while i check ."),
                    (0.55, "please request the refund for error {code} at {code_url} ."),
                ],
            },
            Step {
                user: &["i submitted it", "request sent"],
                agent: &[
                    (0.5, "great ! is there anything else i can help you with ?"),
                    (0.5, "great ! the refund for {product} will arrive in five days ."),
                ],
            },
            Step {
                user: &["ok thanks", "good"],
                agent: &[(1.0, "you are welcome . is there anything else i can help you with ?")],
            },
        ],
    },
    // license transfer
    Scenario {
        intro: &["i need to move {product} {version} to a new computer", "how do i transfer my {product} {version} license ?"],
        steps: [
            Step {
                user: &["my old computer broke", "i just got a new laptop"],
                agent: &[
                    (0.5, "ok , let me check that for you ."),
                    (0.5, "you can deactivate the old install at aka.ms/my-devices ."),
                ],
            },
            Step {
                user: &["done , now what ?", "i did that"],
                agent: &[
                    (0.45, "thank you for waiting ."),
                    (0.55, "now please download {product} from {product_url} on the new computer ."),
                ],
            },
            Step {
                user: &["setup shows error {code}", "it fails with error {code}"],
                agent: &[
                    (0.5, "i am sorry to hear that . let me check ."),
                    (0.5, "error {code} means the license is still assigned ."),
                ],
            },
            Step {
                user: &["how do i fix that ?", "what should i do ?"],
                agent: &[
                    (0.45, "please wait a moment while i check ."),
                    (0.55, "please release the license for error {code} at {code_url} ."),
                ],
            },
            Step {
                user: &["it works now", "installed"],
                agent: &[
                    (0.5, "great ! is there anything else i can help you with ?"),
                    (0.5, "great ! {product} {version} is now on your new computer ."),
                ],
            },
            Step {
                user: &["thanks", "cool , thanks"],
                agent: &[(1.0, "you are welcome . is there anything else i can help you with ?")],
            },
        ],
    },
];

struct Slots {
    product: &'static str,
    version: &'static str,
    agent: &'static str,
    code: usize,
}

impl Slots {
    fn fill(&self, template: &str) -> String {
        template
            .replace("{product_url}", &product_url(self.product))
            .replace("{code_url}", &code_url(self.code))
            .replace("{product}", self.product)
            .replace("{version}", self.version)
            .replace("{agent}", self.agent)
            .replace("{code}", &error_code(self.code))
    }
}

fn pick<'a, R: Rng>(rng: &mut R, items: &'a [&'a str]) -> &'a str {
    items[rng.gen_range(0..items.len())]
}

fn pick_weighted<'a, R: Rng>(rng: &mut R, items: &'a [(f64, &'a str)]) -> &'a str {
    let total: f64 = items.iter().map(|(w, _)| w).sum();
    let mut u = rng.gen::<f64>() * total;
    for (w, s) in items {
        if u < *w {
            return s;
        }
        u -= w;
    }
    items.last().unwrap().1
}

/// Generates `n_dialogues` dialogues; identical seeds give identical output.
pub fn synth_generate(seed: u64, n_dialogues: usize, config: &SynthConfig) -> Vec<RawDialogue> {
    assert!(n_dialogues >= 1, "n_dialogues must be at least 1");
    assert!(config.min_turns >= 1 && config.min_turns <= config.max_turns && config.max_turns <= 8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_dialogues)
        .map(|i| {
            let scenario = &SCENARIOS[rng.gen_range(0..SCENARIOS.len())];
            let slots = Slots {
                product: PRODUCTS[rng.gen_range(0..PRODUCTS.len())],
                version: VERSIONS[rng.gen_range(0..VERSIONS.len())],
                agent: AGENTS[rng.gen_range(0..AGENTS.len())],
                code: rng.gen_range(0..N_CODES),
            };
            let n_turns = rng.gen_range(config.min_turns..=config.max_turns);
            let mut turns = Vec::with_capacity(n_turns);
            let intro = pick(&mut rng, scenario.intro);
            let hello = pick(&mut rng, &["hi , ", "hello , ", ""]);
            turns.push(RawTurn {
                user: slots.fill(&format!("{hello}{intro}")),
                agent: slots.fill(pick_weighted(&mut rng, GREETING)),
            });
            for k in 1..n_turns {
                let step = if k == n_turns - 1 {
                    &CLOSING
                } else {
                    &scenario.steps[k - 1]
                };
                turns.push(RawTurn {
                    user: slots.fill(pick(&mut rng, step.user)),
                    agent: slots.fill(pick_weighted(&mut rng, step.agent)),
                });
            }
            RawDialogue {
                id: format!("s{seed}-{i:05}"),
                turns,
            }
        })
        .collect()
}

/// Replaces slot values by their slot names, recovering the template.
pub fn delexicalize(text: &str) -> String {
    let mut out = Vec::new();
    for tok in text.split_whitespace() {
        let t = if PRODUCTS.contains(&tok) {
            "{product}".to_string()
        } else if VERSIONS.contains(&tok) {
            "{version}".to_string()
        } else if AGENTS.contains(&tok) {
            "{agent}".to_string()
        } else if tok.starts_with("aka.ms/get-") {
            "{product_url}".to_string()
        } else if tok.starts_with("support.contoso.com/kb") {
            "{code_url}".to_string()
        } else if tok.starts_with("0x") {
            "{code}".to_string()
        } else {
            tok.to_string()
        };
        out.push(t);
    }
    out.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn same_seed_same_corpus() {
        let cfg = SynthConfig::default();
        let a = synth_generate(7, 200, &cfg);
        let b = synth_generate(7, 200, &cfg);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_ne!(a, synth_generate(8, 200, &cfg));
    }

    #[test]
    fn turn_counts_within_range() {
        let ds = synth_generate(1, 500, &SynthConfig::default());
        let counts: BTreeSet<usize> = ds.iter().map(|d| d.turns.len()).collect();
        assert_eq!(counts, (1..=8).collect());
    }

    #[test]
    fn at_least_thirty_agent_templates() {
        let ds = synth_generate(7, 1000, &SynthConfig::default());
        let templates: BTreeSet<String> = ds
            .iter()
            .flat_map(|d| d.turns.iter().map(|t| delexicalize(&t.agent)))
            .collect();
        assert!(templates.len() >= 30, "{}", templates.len());
    }

    #[test]
    fn codes_and_urls_are_distinct() {
        let codes: BTreeSet<String> = (0..N_CODES).map(error_code).collect();
        let urls: BTreeSet<String> = (0..N_CODES).map(code_url).collect();
        assert_eq!(codes.len(), N_CODES);
        assert_eq!(urls.len(), N_CODES);
    }
}
