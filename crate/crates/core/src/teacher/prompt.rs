//! Instruction templates for LLM rerankers.

const POINTWISE_HEADER: &str = "Is the document relevant to the query (Yes or No)?\n";
const PAIRWISE_HEADER: &str = "Which document is more relevant to the query?\nAnswer only 'A' or 'B'. \n";
const QUERY_PREFIX: &str = "Query: ";
const QUERY_SUFFIX: &str = " \n";
const DOCUMENT_PREFIX: &str = "Document: ";
const DOCUMENT_A_PREFIX: &str = "Document A: ";
const DOCUMENT_B_PREFIX: &str = "\nDocument B: ";

pub fn prompt_pointwise(query: &str, document: &str) -> String {
    format!("{POINTWISE_HEADER}{QUERY_PREFIX}{query}{QUERY_SUFFIX}{DOCUMENT_PREFIX}{document}")
}

/// Option `A` is `doc_i`, option `B` is `doc_j`.
pub fn prompt_pairwise(query: &str, doc_i: &str, doc_j: &str) -> String {
    format!(
        "{PAIRWISE_HEADER}{QUERY_PREFIX}{query}{QUERY_SUFFIX}{DOCUMENT_A_PREFIX}{doc_i}{DOCUMENT_B_PREFIX}{doc_j}"
    )
}

/// Recovers `(query, document)` from a pointwise prompt.
pub fn parse_pointwise_prompt(prompt: &str) -> Option<(String, String)> {
    let rest = prompt.strip_prefix(POINTWISE_HEADER)?.strip_prefix(QUERY_PREFIX)?;
    let (query, document) = rest.split_once(&format!("{QUERY_SUFFIX}{DOCUMENT_PREFIX}"))?;
    Some((query.to_string(), document.to_string()))
}

/// Recovers `(query, doc_a, doc_b)` from a pairwise prompt.
pub fn parse_pairwise_prompt(prompt: &str) -> Option<(String, String, String)> {
    let rest = prompt.strip_prefix(PAIRWISE_HEADER)?.strip_prefix(QUERY_PREFIX)?;
    let (query, docs) = rest.split_once(&format!("{QUERY_SUFFIX}{DOCUMENT_A_PREFIX}"))?;
    let (a, b) = docs.split_once(DOCUMENT_B_PREFIX)?;
    Some((query.to_string(), a.to_string(), b.to_string()))
}
