typedef int T;
struct s { int a; };
enum e { E0, E1 };
int f(int a);

int f(int a)
{
  T t = a;
  return t + E1;
}
