//! Binary tensor container: magic `BWTS1`, a name table, a shape
//! table, then the little-endian f64 payload in entry order. Used both
//! for parameter checkpoints and for precomputed-feature files.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor, TensorError};

const MAGIC: &[u8; 5] = b"BWTS1";

pub fn save_named_tensors(
    entries: &[(String, Tensor)],
    path: &Path,
) -> Result<(), TensorError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, _) in entries {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
    }
    for (_, tensor) in entries {
        w.write_all(&(tensor.rank() as u32).to_le_bytes())?;
        for &dim in tensor.shape() {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
    }
    for (_, tensor) in entries {
        for &value in tensor.data() {
            w.write_all(&value.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_named_tensors(path: &Path) -> Result<Vec<(String, Tensor)>, TensorError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let n = read_u32(&mut r)? as usize;
    let mut names = Vec::with_capacity(n);
    for _ in 0..n {
        let len = read_u32(&mut r)? as usize;
        let mut bytes = vec![0u8; len];
        r.read_exact(&mut bytes)?;
        names.push(String::from_utf8(bytes).map_err(|e| {
            TensorError::Checkpoint(format!("name is not UTF-8: {e}"))
        })?);
    }
    let mut shapes = Vec::with_capacity(n);
    for _ in 0..n {
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        shapes.push(shape);
    }
    let mut entries = Vec::with_capacity(n);
    for (name, shape) in names.into_iter().zip(shapes) {
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        entries.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(entries)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, TensorError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Writes every parameter of the store in registration order.
pub fn save_params(store: &ParamStore, path: &Path) -> Result<(), TensorError> {
    let entries: Vec<(String, Tensor)> = store
        .iter()
        .map(|p| (p.name.clone(), p.value.clone()))
        .collect();
    save_named_tensors(&entries, path)
}

/// Rebuilds a store (with zeroed gradients) from a checkpoint.
pub fn load_params(path: &Path) -> Result<ParamStore, TensorError> {
    let mut store = ParamStore::new();
    for (name, tensor) in load_named_tensors(path)? {
        store.register(&name, tensor)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_names_shapes_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bwts");
        let mut store = ParamStore::new();
        store
            .register("head.w", Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.25, -0.5]).unwrap())
            .unwrap();
        store.register("head.b", Tensor::vector(vec![0.125, -9.0])).unwrap();
        store.register("scalar", Tensor::scalar(7.0)).unwrap();
        save_params(&store, &path).unwrap();

        let loaded = load_params(&path).unwrap();
        assert_eq!(loaded.len(), 3);
        for p in store.iter() {
            let q = loaded.get(&p.name).unwrap();
            assert_eq!(q.value, p.value);
            assert!(q.grad.data().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.bwts");
        std::fs::write(&path, b"NOPE!rest").unwrap();
        assert!(matches!(
            load_params(&path),
            Err(TensorError::Checkpoint(_))
        ));
    }
}
