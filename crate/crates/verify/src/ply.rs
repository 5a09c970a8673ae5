//! Minimal independent reader for binary little-endian PLY vertex
//! clouds, written straight from the format description.

/// Parses a binary_little_endian 1.0 PLY byte stream and returns the
/// (x, y, z) float properties of the vertex element.
pub fn read_ply_xyz(bytes: &[u8]) -> Result<Vec<[f32; 3]>, String> {
    let header_end = find_header_end(bytes).ok_or("missing end_header")?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|e| e.to_string())?;
    let mut lines = header.lines();

    if lines.next() != Some("ply") {
        return Err("first line must be exactly 'ply'".into());
    }
    let mut vertex_count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut fmt_ok = false;
    let mut in_vertex = false;
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "binary_little_endian", "1.0"] => fmt_ok = true,
            ["comment", ..] => {}
            ["element", "vertex", n] => {
                vertex_count = Some(n.parse().map_err(|_| "bad vertex count")?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", ty, name] if in_vertex => {
                if *ty != "float" {
                    return Err(format!("unsupported property type {ty}"));
                }
                props.push((*name).to_string());
            }
            ["end_header"] => break,
            _ => return Err(format!("unrecognized header line: {line}")),
        }
    }
    if !fmt_ok {
        return Err("not binary_little_endian 1.0".into());
    }
    if props != ["x", "y", "z"] {
        return Err(format!("expected x,y,z float properties, got {props:?}"));
    }
    let n = vertex_count.ok_or("no vertex element")?;

    let body = &bytes[header_end..];
    if body.len() < n * 12 {
        return Err(format!(
            "body too short: {} bytes for {n} vertices",
            body.len()
        ));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let at = i * 12;
        let f = |off: usize| {
            f32::from_le_bytes([body[at + off], body[at + off + 1], body[at + off + 2], body[at + off + 3]])
        };
        out.push([f(0), f(4), f(8)]);
    }
    Ok(out)
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    let needle = b"end_header\n";
    bytes
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + needle.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_hand_built_file() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(
            b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        );
        for v in [1.0f32, 2.0, 3.0, -4.5, 0.25, 9.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let pts = read_ply_xyz(&bytes).unwrap();
        assert_eq!(pts, vec![[1.0, 2.0, 3.0], [-4.5, 0.25, 9.0]]);
    }

    #[test]
    fn rejects_missing_magic() {
        assert!(read_ply_xyz(b"plx\nend_header\n").is_err());
    }
}
