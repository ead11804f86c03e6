//! Run-length token lists used by the text manifests.

pub(crate) fn run_length(tokens: &[String]) -> String {
    let mut out: Vec<String> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let mut j = i + 1;
        while j < tokens.len() && tokens[j] == tokens[i] {
            j += 1;
        }
        if j - i > 1 {
            out.push(format!("{}*{}", tokens[i], j - i));
        } else {
            out.push(tokens[i].clone());
        }
        i = j;
    }
    out.join(" ")
}

pub(crate) fn expand(fields: &[&str]) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    for f in fields {
        match f.split_once('*') {
            Some((tok, n)) => {
                let n: usize = n.parse().map_err(|_| format!("bad repeat count in {f:?}"))?;
                out.extend(std::iter::repeat_n(tok.to_string(), n));
            }
            None => out.push(f.to_string()),
        }
    }
    Ok(out)
}
