use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::{PriorError, PriorModel};
use crate::lexicon::{Vocabulary, WordId};
use crate::math::logsumexp;
use crate::service::{Candidates, NextLogprobsRequest, ServiceClient, WIRE_END};

/// Tolerance on the service's own normalization before the client rescales.
const SERVICE_NORM_TOL: f64 = 1e-6;

/// Prior backed by the remote transformer service.
///
/// Every request names the full candidate list (vocabulary order, then the
/// end marker) so the response order is unambiguous. Responses are cached by
/// prefix; the cache is shared across threads.
pub struct RemotePrior {
    client: ServiceClient,
    vocab: Arc<Vocabulary>,
    prompt: Vec<String>,
    candidates: Vec<String>,
    cache: Mutex<HashMap<Vec<WordId>, Arc<Vec<f64>>>>,
    unigram: Vec<f64>,
}

impl RemotePrior {
    pub fn new(client: ServiceClient, vocab: Arc<Vocabulary>, prompt: Vec<String>) -> Self {
        let mut candidates: Vec<String> = vocab.words().to_vec();
        candidates.push(WIRE_END.to_string());
        // add-one over the vocabulary's frequency counts
        let total = vocab.total_freq() as f64 + vocab.len() as f64;
        let unigram = vocab
            .ids()
            .map(|id| ((vocab.freq(id) as f64 + 1.0) / total).ln())
            .collect();
        Self {
            client,
            vocab,
            prompt,
            candidates,
            cache: Mutex::new(HashMap::new()),
            unigram,
        }
    }

    fn fetch(&self, prefix: &[WordId]) -> Result<Arc<Vec<f64>>, PriorError> {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(prefix) {
            return Ok(Arc::clone(hit));
        }
        let mut context = self.prompt.clone();
        context.extend(prefix.iter().map(|id| self.vocab.word(*id).to_string()));
        let resp = self.client.next_logprobs(&NextLogprobsRequest {
            context,
            candidates: Candidates::List(self.candidates.clone()),
        })?;
        if resp.logprobs.len() != self.candidates.len() {
            return Err(PriorError::Protocol(format!(
                "expected {} log-probabilities, got {}",
                self.candidates.len(),
                resp.logprobs.len()
            )));
        }
        if resp.logprobs.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(PriorError::Protocol("non-finite log-probability".into()));
        }
        let z = logsumexp(&resp.logprobs);
        if !z.is_finite() || z.abs() > SERVICE_NORM_TOL {
            return Err(PriorError::Protocol(format!(
                "distribution not normalized (logsumexp = {z})"
            )));
        }
        let dist: Arc<Vec<f64>> = Arc::new(resp.logprobs.iter().map(|x| x - z).collect());
        self.cache
            .lock()
            .expect("cache lock")
            .insert(prefix.to_vec(), Arc::clone(&dist));
        Ok(dist)
    }
}

impl PriorModel for RemotePrior {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn context_window(&self) -> Option<usize> {
        None
    }

    fn next_logprobs(&self, prefix: &[WordId]) -> Result<Vec<f64>, PriorError> {
        Ok(self.fetch(prefix)?.as_ref().clone())
    }

    fn logprob(&self, prefix: &[WordId], next: WordId) -> Result<f64, PriorError> {
        Ok(self.fetch(prefix)?[next as usize])
    }

    fn unigram_logprob(&self, word: WordId) -> Result<f64, PriorError> {
        self.unigram
            .get(word as usize)
            .copied()
            .ok_or_else(|| PriorError::UnknownWord(format!("id {word}")))
    }
}
