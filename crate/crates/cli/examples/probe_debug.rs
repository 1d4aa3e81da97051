// scratch probe: inspect what weight the encoder puts on entity words
use lexret_cli::RunConfig;
use lexret_eval::read_qrels_file;
use lexret_model::checkpoint::load_checkpoint;
use lexret_model::repr::encode_lexicon;
use lexret_model::vocab::Vocabulary;

fn main() {
    let cfg_path = std::env::args().nth(1).unwrap_or("/tmp/v4.json".into());
    let ckpt = std::env::args().nth(2).unwrap_or("pretrain/checkpoint.ckpt".into());
    let config = RunConfig::load(std::path::Path::new(&cfg_path)).unwrap();
    let vocab = Vocabulary::load(&config.paths.output_dir.join("vocab.txt")).unwrap();
    let (w, _) = load_checkpoint(&config.paths.output_dir.join(&ckpt)).unwrap();
    let corpus = std::fs::read_to_string(&config.paths.corpus).unwrap();
    let docs: Vec<(String, String)> = corpus.lines().map(|l| { let (a,b) = l.split_once('\t').unwrap(); (a.into(), b.into()) }).collect();
    let queries = std::fs::read_to_string(&config.paths.dev_queries).unwrap();
    let qs: Vec<(String, String)> = queries.lines().map(|l| { let (a,b) = l.split_once('\t').unwrap(); (a.into(), b.into()) }).collect();
    let qrels = read_qrels_file(&config.paths.dev_qrels).unwrap();

    for (qid, qtext) in qs.iter().take(3) {
        let positive = qrels.positives(qid)[0].clone();
        let pos_text = docs.iter().find(|(id, _)| *id == positive).unwrap().1.clone();
        let qv = encode_lexicon(&w, &vocab.encode(qtext)).unwrap();
        let pv = encode_lexicon(&w, &vocab.encode(&pos_text)).unwrap();
        println!("query {qid} {qtext:?} -> positive {positive}");
        // weight of each query token in both representations
        for word in qtext.split(' ') {
            let id = vocab.id(word);
            println!("  {word}: q weight {:.3}, pos-doc weight {:.3}", qv.weight(id), pv.weight(id));
        }
        // rank positive among all docs
        let mut scores: Vec<(String, f64)> = docs.iter().map(|(id, text)| {
            (id.clone(), qv.dot(&encode_lexicon(&w, &vocab.encode(text)).unwrap()))
        }).collect();
        scores.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let rank = scores.iter().position(|(id, _)| *id == positive).unwrap() + 1;
        println!("  positive rank {rank} of {} (top: {} {:.1}, positive {:.1}), q nnz {}", scores.len(), scores[0].0, scores[0].1, scores[rank-1].1, qv.nnz());
    }
}
