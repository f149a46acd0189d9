"""
테스트 모듈

이 패키지는 KET Graph-RAG 인덱스 프로젝트의 테스트 코드를 포함합니다.
"""
