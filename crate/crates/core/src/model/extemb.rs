//! Precomputed per-token external vectors, keyed by sentence id. The file
//! holds one block per sentence: a header line `# <sent_id> <dim> <n>`
//! followed by `n` lines of `dim` whitespace-separated numbers, one line
//! per token in order.

use std::collections::HashMap;

use super::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalEmbeddings {
    dim: usize,
    by_id: HashMap<String, Vec<Vec<f64>>>,
}

impl ExternalEmbeddings {
    pub fn parse(text: &str) -> Result<ExternalEmbeddings, ModelError> {
        let mut dim: Option<usize> = None;
        let mut by_id: HashMap<String, Vec<Vec<f64>>> = HashMap::new();
        let mut lines = text.lines().enumerate().peekable();
        while let Some((idx, line)) = lines.next() {
            let lineno = idx + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ModelError::ExternalParse { line: lineno, msg };
            let rest = line
                .strip_prefix('#')
                .ok_or_else(|| err("expected a `# <sent_id> <dim> <n>` header".into()))?;
            let fields: Vec<&str> = rest.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(err(format!(
                    "header needs sent_id, dim and n, found {} fields",
                    fields.len()
                )));
            }
            let id = fields[0].to_string();
            let block_dim: usize = fields[1]
                .parse()
                .map_err(|_| err(format!("bad dim `{}`", fields[1])))?;
            let n: usize = fields[2]
                .parse()
                .map_err(|_| err(format!("bad vector count `{}`", fields[2])))?;
            match dim {
                None => dim = Some(block_dim),
                Some(d) if d != block_dim => {
                    return Err(err(format!("dim {block_dim} after earlier blocks used {d}")));
                }
                _ => {}
            }
            if by_id.contains_key(&id) {
                return Err(err(format!("duplicate sentence id `{id}`")));
            }
            let mut vectors = Vec::with_capacity(n);
            for _ in 0..n {
                let (vidx, vline) = lines
                    .next()
                    .ok_or_else(|| err(format!("block `{id}` ends before {n} vectors")))?;
                let verr = |msg: String| ModelError::ExternalParse {
                    line: vidx + 1,
                    msg,
                };
                let mut vector = Vec::with_capacity(block_dim);
                for field in vline.split_whitespace() {
                    vector.push(
                        field
                            .parse::<f64>()
                            .map_err(|_| verr(format!("bad number `{field}`")))?,
                    );
                }
                if vector.len() != block_dim {
                    return Err(verr(format!(
                        "{} values on a {block_dim}-dim vector line",
                        vector.len()
                    )));
                }
                vectors.push(vector);
            }
            by_id.insert(id, vectors);
        }
        Ok(ExternalEmbeddings {
            dim: dim.unwrap_or(0),
            by_id,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sentence_count(&self) -> usize {
        self.by_id.len()
    }

    /// Vectors for one sentence, checked against its token count.
    pub fn lookup(&self, id: &str, tokens: usize) -> Result<&[Vec<f64>], ModelError> {
        let vectors = self.by_id.get(id).ok_or_else(|| ModelError::ExternalMissing {
            id: id.to_string(),
        })?;
        if vectors.len() != tokens {
            return Err(ModelError::ExternalCount {
                id: id.to_string(),
                expected: tokens,
                found: vectors.len(),
            });
        }
        Ok(vectors)
    }
}
