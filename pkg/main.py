"""
KET 인덱스 메인 실행 파일

실행 예시:
    $ python main.py index data/corpus out/index
    ============================================================
    ✓ KET 인덱스 빌드 완료
    ============================================================
      • 출력: out/index
      • 청크: 30
      • 코어 청크: 24
      ...

    $ python main.py query out/index "Who founded Acme?" --emit-context
    $ python main.py estimate --num-chunks 1000 --beta 0.8 --json

서브커맨드와 플래그 설명은 `python main.py --help` 를 참고하세요.
"""

import sys

from src.cli import main


if __name__ == "__main__":
    sys.exit(main())
