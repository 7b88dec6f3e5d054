from cfustmix.cli import main

raise SystemExit(main())
