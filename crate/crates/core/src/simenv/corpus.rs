use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evidence::{build_tree, DocumentRecord, EvidenceTree, NodeId, NodeRecord, RetrievalOutput};
use crate::reward::normalize_answer;
use crate::utility::{Embedder, EmbeddingVector};

use super::embed::CachedEmbedder;
use super::SimError;

pub const ATTRIBUTES: [&str; 8] = [
    "capital", "founder", "mascot", "river", "anthem", "currency", "patron", "harbor",
];

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const NOISE_SYLLABLES: usize = 2;
const NAME_SYLLABLES: usize = 3;
const NOISE_WORDS_PER_LEAF: usize = 5;
const DISTRACTORS_PER_TASK: usize = 3;
/// Action budget assumed by the reachability check.
pub const REACHABILITY_BUDGET: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub num_docs: usize,
    pub depth: usize,
    pub branching: usize,
    pub num_tasks: usize,
    pub redundancy_factor: usize,
    pub noise_vocab_size: usize,
    /// Sources returned per retrieval call.
    pub retrieval_k: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            num_docs: 60,
            depth: 3,
            branching: 2,
            num_tasks: 20,
            redundancy_factor: 3,
            noise_vocab_size: 400,
            retrieval_k: 5,
            seed: 7,
        }
    }
}

impl CorpusSpec {
    pub fn leaves_per_doc(&self) -> usize {
        self.branching.pow(self.depth as u32 - 1)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSpec(m));
        if self.num_docs == 0
            || self.depth == 0
            || self.branching == 0
            || self.num_tasks == 0
            || self.redundancy_factor == 0
            || self.noise_vocab_size == 0
            || self.retrieval_k == 0
        {
            return bad(format!("all counts must be positive: {self:?}"));
        }
        if self.depth > 8 || self.branching > 8 {
            return bad(format!("tree too large: depth {} branching {}", self.depth, self.branching));
        }
        let noise_cap = (CONSONANTS.len() * VOWELS.len()).pow(NOISE_SYLLABLES as u32);
        if self.noise_vocab_size > noise_cap {
            return bad(format!("noise_vocab_size {} exceeds {noise_cap}", self.noise_vocab_size));
        }
        if self.redundancy_factor > self.num_docs {
            return bad(format!(
                "redundancy_factor {} exceeds num_docs {}",
                self.redundancy_factor, self.num_docs
            ));
        }
        let needed = self.num_tasks * 2;
        let have = (self.num_docs / self.redundancy_factor) * self.leaves_per_doc();
        if needed > have {
            return bad(format!("{needed} planted leaves needed but only {have} leaves exist"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub candidates: Vec<String>,
    pub canned_trace: String,
    /// Generator bookkeeping. Agents never see it.
    #[serde(default)]
    pub relevant_leaf_ids: Vec<NodeId>,
}

impl TaskRecord {
    pub fn gold(&self) -> &str {
        self.gold_answers.first().map(String::as_str).unwrap_or("")
    }
}

struct Words {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl Words {
    fn word(&mut self, syllables: usize) -> String {
        loop {
            let mut w = String::with_capacity(syllables * 2);
            for _ in 0..syllables {
                w.push(*CONSONANTS.choose(&mut self.rng).unwrap() as char);
                w.push(*VOWELS.choose(&mut self.rng).unwrap() as char);
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Plant {
    Gold(usize),
    Distractor(usize),
}

/// Deterministic corpus with planted answers. Documents come in families
/// of `redundancy_factor` near-duplicates: each variant repeats the family
/// template with one noise word per leaf swapped. Every gold answer is
/// planted in one template leaf, so it appears verbatim in exactly
/// `redundancy_factor` leaves across as many documents. Internal nodes
/// summarize their subtree by leaf titles.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<(Vec<DocumentRecord>, Vec<TaskRecord>), SimError> {
    spec.validate()?;
    let mut words = Words {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        used: HashSet::new(),
    };
    let noise: Vec<String> = (0..spec.noise_vocab_size)
        .map(|_| words.word(NOISE_SYLLABLES))
        .collect();

    let per_doc = spec.leaves_per_doc();
    let families = spec.num_docs / spec.redundancy_factor;
    let mut slots: Vec<(usize, usize)> = (0..families)
        .flat_map(|f| (0..per_doc).map(move |leaf| (f, leaf)))
        .collect();
    slots.shuffle(&mut words.rng);
    let mut plants: Vec<Vec<Option<Plant>>> = vec![vec![None; per_doc]; families];
    let mut free = slots.into_iter();
    for task in 0..spec.num_tasks {
        for plant in [Plant::Gold(task), Plant::Distractor(task)] {
            let (f, leaf) = free
                .next()
                .ok_or_else(|| SimError::InvalidSpec(format!("no leaf left for task {task}")))?;
            plants[f][leaf] = Some(plant);
        }
    }

    struct TaskDraft {
        attr: &'static str,
        e1: String,
        e2: String,
        gold: String,
        distractors: Vec<String>,
    }
    let drafts: Vec<TaskDraft> = (0..spec.num_tasks)
        .map(|i| TaskDraft {
            attr: ATTRIBUTES[i % ATTRIBUTES.len()],
            e1: words.word(NAME_SYLLABLES),
            e2: words.word(NAME_SYLLABLES),
            gold: words.word(NAME_SYLLABLES),
            distractors: (0..DISTRACTORS_PER_TASK)
                .map(|_| words.word(NAME_SYLLABLES))
                .collect(),
        })
        .collect();

    // (template index, variant) per document; leftover documents are
    // single-variant templates with nothing planted
    let layout: Vec<(usize, usize)> = (0..spec.num_docs)
        .map(|d| {
            if d < families * spec.redundancy_factor {
                (d / spec.redundancy_factor, d % spec.redundancy_factor)
            } else {
                (families + d - families * spec.redundancy_factor, 0)
            }
        })
        .collect();
    let templates = layout.last().map_or(0, |(t, _)| t + 1);
    let fillers: Vec<Vec<Vec<&str>>> = (0..templates)
        .map(|_| {
            (0..per_doc)
                .map(|_| {
                    (0..NOISE_WORDS_PER_LEAF)
                        .map(|_| noise.choose(&mut words.rng).unwrap().as_str())
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut relevant: Vec<Vec<NodeId>> = vec![Vec::new(); spec.num_tasks];
    let mut docs = Vec::with_capacity(spec.num_docs);
    let first_leaf = (0..spec.depth - 1).map(|l| spec.branching.pow(l as u32)).sum::<usize>();
    let total: usize = (0..spec.depth).map(|l| spec.branching.pow(l as u32)).sum();
    for (d, &(tpl, variant)) in layout.iter().enumerate() {
        let doc_id = format!("d{d:04}");
        let mut titles = vec![String::new(); total];
        let mut texts = vec![String::new(); total];
        for j in 0..per_doc {
            let idx = first_leaf + j;
            let mut filler = fillers[tpl][j].clone();
            if variant > 0 {
                // the first two words form the title and stay fixed
                let pos = words.rng.gen_range(2..NOISE_WORDS_PER_LEAF);
                filler[pos] = noise.choose(&mut words.rng).unwrap();
            }
            let plant = plants.get(tpl).and_then(|p| p[j]);
            let (title, text) = match plant {
                Some(Plant::Gold(t)) => {
                    let k = &drafts[t];
                    relevant[t].push(NodeId(format!("{doc_id}.{idx}")));
                    let title = format!("{} {} {}", k.e1, k.e2, k.attr);
                    let text = format!("{title} is {} {}", k.gold, filler.join(" "));
                    (title, text)
                }
                Some(Plant::Distractor(t)) => {
                    let k = &drafts[t];
                    let title = format!("{} {} {}", k.e1, k.e2, k.attr);
                    let text = format!("{title} disputed {}", filler.join(" "));
                    (title, text)
                }
                None => (filler[..2].join(" "), filler.join(" ")),
            };
            titles[idx] = title;
            texts[idx] = text;
        }
        // internal nodes bottom-up: text is the deduplicated leaf-title
        // tokens of the subtree, title its first three tokens
        for idx in (0..first_leaf).rev() {
            let mut seen = HashSet::new();
            let mut toks = Vec::new();
            for c in 0..spec.branching {
                let child = idx * spec.branching + 1 + c;
                let src = if child >= first_leaf { &titles[child] } else { &texts[child] };
                for tok in src.split_whitespace() {
                    if seen.insert(tok.to_string()) {
                        toks.push(tok.to_string());
                    }
                }
            }
            titles[idx] = toks.iter().take(3).cloned().collect::<Vec<_>>().join(" ");
            texts[idx] = toks.join(" ");
        }
        let nodes = (0..total)
            .map(|idx| NodeRecord {
                node_id: NodeId(format!("{doc_id}.{idx}")),
                parent_id: (idx > 0).then(|| NodeId(format!("{doc_id}.{}", (idx - 1) / spec.branching))),
                level: level_of(idx, spec.branching),
                title: titles[idx].clone(),
                text: texts[idx].clone(),
            })
            .collect();
        docs.push(DocumentRecord {
            doc_id,
            title: titles[0].clone(),
            nodes,
        });
    }

    let tasks = drafts
        .into_iter()
        .enumerate()
        .map(|(i, k)| {
            let mut candidates = k.distractors.clone();
            candidates.push(k.gold.clone());
            candidates.shuffle(&mut words.rng);
            TaskRecord {
                task_id: format!("t{i:04}"),
                question: format!("what is the {} of {} {}", k.attr, k.e1, k.e2),
                gold_answers: vec![k.gold],
                candidates,
                canned_trace: format!("i need to find the {} of {} {}", k.attr, k.e1, k.e2),
                relevant_leaf_ids: std::mem::take(&mut relevant[i]),
            }
        })
        .collect::<Vec<_>>();

    let corpus = SimCorpus::new(docs.clone())?;
    for task in &tasks {
        corpus.check_reachable(task, spec.retrieval_k, REACHABILITY_BUDGET)?;
    }
    Ok((docs, tasks))
}

fn level_of(mut idx: usize, branching: usize) -> u32 {
    let mut level = 0;
    while idx > 0 {
        idx = (idx - 1) / branching;
        level += 1;
    }
    level
}

/// Ranks `trees` by cosine of the query embedding against each root's
/// text (which starts with its title); ties by doc id.
pub fn retrieve(
    query: &str,
    trees: &[Arc<EvidenceTree>],
    k: usize,
    embedder: &dyn Embedder,
) -> Result<RetrievalOutput, SimError> {
    let roots: Vec<EmbeddingVector> = trees.iter().map(|t| embedder.embed(&root_text(t))).collect();
    rank(query, trees, &roots, k, embedder, 0)
}

fn root_text(tree: &EvidenceTree) -> String {
    tree.root().text.clone()
}

fn rank(
    query: &str,
    trees: &[Arc<EvidenceTree>],
    roots: &[EmbeddingVector],
    k: usize,
    embedder: &dyn Embedder,
    search_index: usize,
) -> Result<RetrievalOutput, SimError> {
    if trees.is_empty() {
        return Err(SimError::EmptyCorpus);
    }
    if k == 0 {
        return Err(SimError::InvalidSpec("k must be at least 1".into()));
    }
    let q = embedder.embed(query);
    let mut scored: Vec<(f64, usize)> = roots.iter().enumerate().map(|(i, v)| (q.cosine(v), i)).collect();
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| trees[a.1].doc_id().cmp(trees[b.1].doc_id()))
    });
    scored.truncate(k);
    Ok(RetrievalOutput {
        search_index,
        query: query.to_string(),
        trees: scored.iter().map(|(_, i)| Arc::clone(&trees[*i])).collect(),
        scores: scored.iter().map(|(s, _)| *s).collect(),
    })
}

/// Validated corpus with cached root and node embeddings.
pub struct SimCorpus {
    records: Vec<DocumentRecord>,
    trees: Vec<Arc<EvidenceTree>>,
    roots: Vec<EmbeddingVector>,
    embedder: CachedEmbedder,
}

impl SimCorpus {
    pub fn new(records: Vec<DocumentRecord>) -> Result<Self, SimError> {
        Self::with_embedder(records, CachedEmbedder::default())
    }

    pub fn with_embedder(records: Vec<DocumentRecord>, mut embedder: CachedEmbedder) -> Result<Self, SimError> {
        if records.is_empty() {
            return Err(SimError::EmptyCorpus);
        }
        let trees = records
            .iter()
            .map(|r| build_tree(r).map(Arc::new).map_err(|e| SimError::InvalidSpec(format!("{}: {e}", r.doc_id))))
            .collect::<Result<Vec<_>, _>>()?;
        for t in &trees {
            for n in t.nodes() {
                embedder.warm(&n.text);
            }
        }
        let roots = trees.iter().map(|t| embedder.embed(&root_text(t))).collect();
        Ok(Self {
            records,
            trees,
            roots,
            embedder,
        })
    }

    pub fn records(&self) -> &[DocumentRecord] {
        &self.records
    }

    pub fn trees(&self) -> &[Arc<EvidenceTree>] {
        &self.trees
    }

    pub fn embedder(&self) -> &CachedEmbedder {
        &self.embedder
    }

    pub fn retrieve(&self, query: &str, k: usize, search_index: usize) -> Result<RetrievalOutput, SimError> {
        rank(query, &self.trees, &self.roots, k, &self.embedder, search_index)
    }

    /// Breadth-first check that retrieving the question and expanding
    /// down one gold document reaches a gold leaf within `budget` actions
    /// (one retrieval, one expansion per level, one answer).
    pub fn check_reachable(&self, task: &TaskRecord, k: usize, budget: usize) -> Result<(), SimError> {
        let unreachable = || SimError::Unreachable(task.task_id.clone());
        let gold = normalize_answer(task.gold());
        let out = self.retrieve(&task.question, k, 0)?;
        let mut best: Option<usize> = None;
        for tree in &out.trees {
            let mut frontier = vec![tree.root().node_id.clone()];
            let mut expansions = 0;
            while !frontier.is_empty() {
                if frontier.iter().any(|id| {
                    let n = tree.node(id).expect("frontier node in tree");
                    n.is_leaf && normalize_answer(&n.text).split_whitespace().any(|t| t == gold)
                }) {
                    best = Some(best.map_or(expansions, |b: usize| b.min(expansions)));
                    break;
                }
                frontier = frontier
                    .iter()
                    .flat_map(|id| tree.children(id).map(|c| c.node_id.clone()).collect::<Vec<_>>())
                    .collect();
                expansions += 1;
            }
        }
        match best {
            Some(e) if e + 2 <= budget => Ok(()),
            _ => Err(unreachable()),
        }
    }
}
