//! Library half of the `zipcoll` command: argument types and the code
//! behind each subcommand, kept out of `main` so tests can drive it.

pub mod args;
pub mod bench;
pub mod files;
pub mod launch;
pub mod plot;
pub mod report;

use anyhow::{bail, Context};
use zipcoll::switcher::{self, CostModel, ProfileOptions};

use args::{Cli, CollectiveArgs, Command, PlotArgs, ProfileArgs};
use launch::{launch, transport_name, Launched};

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen(a) => println!("{}", files::gen(&a)?),
        Command::Analyze(a) => {
            let data = zipcoll::datagen::read_bf16(&a.file)?;
            println!("{}", files::analyze(&data, a.sigma)?);
        }
        Command::Zip(a) => println!("{}", files::zip(&a)?),
        Command::Unzip(a) => println!("{}", files::unzip(&a)?),
        Command::Collective(a) => collective(a)?,
        Command::Profile(a) => profile(a)?,
        Command::Plot(a) => plot(a)?,
    }
    Ok(())
}

fn collective(a: CollectiveArgs) -> anyhow::Result<()> {
    if a.repeat == 0 {
        bail!("--repeat must be at least 1");
    }
    let model = match &a.cost_profile {
        Some(p) => Some(CostModel::load(p).with_context(|| format!("loading {}", p.display()))?),
        None if a.op.contains(&args::Op::AutoRs) => bail!("auto-rs needs --cost-profile"),
        None => None,
    };
    let plan = bench::Plan {
        ops: a.op.clone(),
        sizes: a.size.clone(),
        seed: a.seed,
        sigma: args::parse_sigma(&a.sigma)?,
        verify: a.verify,
        uneven: a.uneven,
        repeat: a.repeat,
        native: a.native.into(),
        model,
        transport: transport_name(a.world.transport),
    };
    let outcomes: Vec<bench::Outcome> = match launch(&a.world, move |c| bench::run(c, &plan))? {
        Launched::Local(v) => v,
        Launched::Rank(rank, o) => {
            if rank != 0 {
                for f in &o.failures {
                    eprintln!("verification failed: {f}");
                }
                if o.any_failed {
                    bail!("verification failed");
                }
                return Ok(());
            }
            vec![o]
        }
        Launched::Spawned => return Ok(()),
    };
    for f in outcomes.iter().flat_map(|o| &o.failures) {
        eprintln!("verification failed: {f}");
    }
    let zero = &outcomes[0];
    report::write_records(&zero.records, a.out.as_deref())?;
    if zero.any_failed {
        bail!("verification failed");
    }
    Ok(())
}

fn profile(a: ProfileArgs) -> anyhow::Result<()> {
    let sizes = if a.size.is_empty() {
        switcher::DEFAULT_SIZES.to_vec()
    } else {
        a.size.clone()
    };
    let opts = ProfileOptions {
        trials: a.trials,
        precision: a.native.into(),
        sigma: args::parse_sigma(&a.sigma)?,
        seed: a.seed,
    };
    let Some(model) = launch(&a.world, move |c| Ok(switcher::profile(c, &sizes, &opts)?))?.rank_zero() else {
        return Ok(());
    };
    model.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{}", a.out.display());
    print!("{}", model.to_text());
    match model.crossover() {
        Some(d) => println!("# compressed path wins above {:.0} bytes per rank", d),
        None => println!("# no crossover: one path wins at every size"),
    }
    Ok(())
}

fn plot(a: PlotArgs) -> anyhow::Result<()> {
    let records = report::read_records(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let script = plot::gnuplot_script(&records);
    match &a.out {
        Some(p) => std::fs::write(p, script).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{script}"),
    }
    Ok(())
}
